// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "srigl/condensed.hpp"
#include "srigl/rng.hpp"
#include "test_util.hpp"

using namespace srigl;
using srigl::testing::max_rel_error;

namespace {

struct RandomLayer {
    DenseMaskedMatrix<float> masked;
    std::size_t k = 0;
};

/// Constant fan-in masked matrix; about one row in eight is left empty.
RandomLayer random_layer(Rng& rng, std::size_t n, std::size_t d, std::size_t k) {
    std::normal_distribution<float> normal;
    RandomLayer out{DenseMaskedMatrix<float>(n, d), k};
    std::vector<std::size_t> perm(d);
    for (std::size_t r = 0; r < n; ++r) {
        if (n > 1 && uniform_below(rng, 8) == 0) continue;
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(perm[i], perm[i + uniform_below(rng, d - i)]);
            out.masked.set(r, perm[i], normal(rng));
        }
    }
    return out;
}

std::vector<float> random_vector(Rng& rng, std::size_t d) {
    std::normal_distribution<float> normal;
    std::vector<float> v(d);
    for (auto& x : v) x = normal(rng);
    return v;
}

template <typename T>
std::span<const T> cspan(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

}  // namespace

TEST(Condensed, FromDenseSortsColumnsPerRow) {
    DenseMaskedMatrix<float> m(2, 4);
    m.set(0, 3, 1.0f);
    m.set(0, 1, 2.0f);
    m.set(1, 0, 3.0f);
    m.set(1, 2, 4.0f);
    const auto c = from_dense(m);
    ASSERT_EQ(c.fan_in(), 2u);
    EXPECT_EQ(c.column(0, 0), 1u);
    EXPECT_EQ(c.column(0, 1), 3u);
    EXPECT_FLOAT_EQ(c.value(0, 0), 2.0f);
    EXPECT_FLOAT_EQ(c.value(0, 1), 1.0f);
    EXPECT_EQ(c.column(1, 0), 0u);
    EXPECT_EQ(c.column(1, 1), 2u);
    // slot-major planes
    EXPECT_EQ(c.index_plane(1)[0], 3u);
    EXPECT_EQ(c.index_plane(1)[1], 2u);
    EXPECT_FLOAT_EQ(c.value_plane(0)[1], 3.0f);
}

TEST(Condensed, HandComputedMatvec) {
    DenseMaskedMatrix<float> m(2, 3);
    m.set(0, 0, 1.0f);
    m.set(0, 2, 2.0f);
    m.set(1, 1, -1.0f);
    m.set(1, 2, 0.5f);
    const auto c = from_dense(m);
    const std::vector<float> v{3.0f, 4.0f, 5.0f};
    const auto y = condensed_matvec(c, cspan(v));
    EXPECT_FLOAT_EQ(y[0], 13.0f);  // 1*3 + 2*5
    EXPECT_FLOAT_EQ(y[1], -1.5f);  // -4 + 2.5
}

TEST(Condensed, EmptyRowIsAblatedAndOutputsZero) {
    DenseMaskedMatrix<float> m(3, 4);
    m.set(0, 0, 1.0f);
    m.set(2, 3, 2.0f);
    const auto c = from_dense(m);
    EXPECT_TRUE(c.is_active(0));
    EXPECT_FALSE(c.is_active(1));
    EXPECT_EQ(c.n_active(), 2u);
    EXPECT_EQ(c.value(1, 0), 0.0f);
    const std::vector<float> v{1.0f, 1.0f, 1.0f, 1.0f};
    const auto y = condensed_matvec(c, cspan(v));
    EXPECT_EQ(y[1], 0.0f);
    EXPECT_EQ(to_dense(c), m);
}

TEST(Condensed, NonUniformFanInRejected) {
    DenseMaskedMatrix<float> m(2, 4);
    m.set(0, 0, 1.0f);
    m.set(0, 1, 1.0f);
    m.set(1, 2, 1.0f);
    try {
        from_dense(m);
        FAIL() << "expected NonUniformFanIn";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonUniformFanIn);
    }
}

TEST(Condensed, FromRowsValidation) {
    const std::vector<std::uint8_t> active{1, 1};
    const std::vector<float> vals{1, 2, 3, 4};
    auto code_of = [&](std::vector<std::uint32_t> cols, std::size_t d, std::size_t k) {
        try {
            CondensedMatrix::from_rows(2, d, k, cspan(cols), std::span<const float>(vals.data(), 2 * k), cspan(active));
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::IoError;  // sentinel: no error
    };
    EXPECT_EQ(code_of({0, 4, 1, 2}, 4, 2), Errc::IndexOutOfRange);
    EXPECT_EQ(code_of({1, 1, 0, 2}, 4, 2), Errc::DuplicateIndex);
    EXPECT_EQ(code_of({0, 1, 0, 1}, 1, 2), Errc::DimensionMismatch);
    EXPECT_EQ(code_of({3, 0, 2, 1}, 4, 2), Errc::IoError);
}

TEST(Condensed, DimensionMismatchOnWrongVectorLength) {
    DenseMaskedMatrix<float> m(1, 3);
    m.set(0, 0, 1.0f);
    const auto c = from_dense(m);
    const std::vector<float> v{1.0f, 2.0f};
    EXPECT_THROW(condensed_matvec(c, cspan(v)), Error);
}

TEST(Condensed, DenseRowsReduceToDenseProduct) {
    Rng rng = make_rng(11);
    const auto layer = random_layer(rng, 1, 9, 9);
    const auto v = random_vector(rng, 9);
    const auto c = from_dense(layer.masked);
    const auto y = condensed_matvec(c, cspan(v));
    Matrix<float> w(1, 9);
    w.data = layer.masked.weights;
    Matrix<float> vm(9, 1);
    vm.data = v;
    EXPECT_LE(max_rel_error(cspan(y), cspan(dense_matmul(w, vm).data)), 1e-6);
}

TEST(Condensed, RandomisedAgreementWithDenseOracle) {
    Rng rng = make_rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + uniform_below(rng, 64);
        const std::size_t d = 1 + uniform_below(rng, 256);
        const std::size_t k = 1 + uniform_below(rng, d);
        const auto layer = random_layer(rng, n, d, k);
        const auto c = from_dense(layer.masked);
        const auto v = random_vector(rng, d);
        const auto got = condensed_matvec(c, cspan(v));
        const auto want = dense_masked_matvec(layer.masked, cspan(v));
        ASSERT_LE(max_rel_error(cspan(got), cspan(want)), 1e-6) << "trial " << trial;

        const std::size_t b = 1 + uniform_below(rng, 6);
        Matrix<float> vb(d, b);
        vb.data = random_vector(rng, d * b);
        const auto gm = condensed_matmul(c, vb);
        const auto wm = dense_masked_matmul(layer.masked, vb);
        ASSERT_LE(max_rel_error(cspan(gm.data), cspan(wm.data)), 1e-6) << "trial " << trial;
    }
}

TEST(Condensed, ThreadedMatmulIsBitIdentical) {
    Rng rng = make_rng(5);
    const auto layer = random_layer(rng, 40, 200, 17);
    const auto c = from_dense(layer.masked);
    Matrix<float> v(200, 37);
    v.data = random_vector(rng, v.data.size());
    const auto one = condensed_matmul(c, v, 1);
    for (unsigned t : {2u, 3u, 8u, 64u}) EXPECT_EQ(condensed_matmul(c, v, t), one) << t << " threads";
}

TEST(Condensed, Linearity) {
    Rng rng = make_rng(6);
    const auto layer = random_layer(rng, 30, 120, 12);
    const auto c = from_dense(layer.masked);
    const auto u = random_vector(rng, 120);
    const auto w = random_vector(rng, 120);
    const float a = 1.75f, b = -0.5f;
    std::vector<float> mix(120);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u[i] + b * w[i];
    const auto lhs = condensed_matvec(c, cspan(mix));
    const auto cu = condensed_matvec(c, cspan(u));
    const auto cw = condensed_matvec(c, cspan(w));
    std::vector<float> rhs(lhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * cu[i] + b * cw[i];
    EXPECT_LE(max_rel_error(cspan(lhs), cspan(rhs)), 1e-5);
}

TEST(Condensed, ColumnPermutationCommutesWithGather) {
    Rng rng = make_rng(7);
    const std::size_t n = 20, d = 50;
    const auto layer = random_layer(rng, n, d, 6);
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DenseMaskedMatrix<float> permuted(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t col = 0; col < d; ++col)
            if (layer.masked.active(r, col)) permuted.set(r, perm[col], layer.masked.weight(r, col));
    const auto v = random_vector(rng, d);
    std::vector<float> pv(d);
    for (std::size_t col = 0; col < d; ++col) pv[perm[col]] = v[col];
    const auto a = condensed_matvec(from_dense(layer.masked), cspan(v));
    const auto b = condensed_matvec(from_dense(permuted), cspan(pv));
    EXPECT_LE(max_rel_error(cspan(a), cspan(b)), 1e-5);
}

TEST(Condensed, DenseRoundTrip) {
    Rng rng = make_rng(8);
    for (int i = 0; i < 50; ++i) {
        const auto layer = random_layer(rng, 1 + uniform_below(rng, 20), 1 + uniform_below(rng, 40), 1);
        EXPECT_EQ(to_dense(from_dense(layer.masked)), layer.masked);
    }
}

TEST(Cfin, GoldenBytes) {
    DenseMaskedMatrix<float> m(2, 3);
    m.set(0, 2, 1.0f);
    const auto c = from_dense(m);  // row 1 ablated, k = 1
    std::ostringstream os;
    write_cfin(os, c);
    const std::string bytes = os.str();
    ASSERT_EQ(bytes.size(), 4u + 4 + 24 + 2 * 4 + 2 * 4 + 1);
    EXPECT_EQ(bytes.substr(0, 4), "CFIN");
    auto u32_at = [&](std::size_t off) {
        std::uint32_t x = 0;
        for (int i = 3; i >= 0; --i) x = (x << 8) | static_cast<unsigned char>(bytes[off + i]);
        return x;
    };
    EXPECT_EQ(u32_at(4), 1u);    // version
    EXPECT_EQ(u32_at(8), 2u);    // n (low word)
    EXPECT_EQ(u32_at(16), 3u);   // d
    EXPECT_EQ(u32_at(24), 1u);   // k
    EXPECT_EQ(u32_at(32), 2u);   // row 0 column
    EXPECT_EQ(u32_at(36), 0u);   // row 1 placeholder column
    EXPECT_EQ(u32_at(40), 0x3f800000u);  // 1.0f
    EXPECT_EQ(u32_at(44), 0u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[48]), 0x01);  // only row 0 active
}

TEST(Cfin, RoundTripIsBitExact) {
    Rng rng = make_rng(9);
    for (int i = 0; i < 100; ++i) {
        const std::size_t d = 1 + uniform_below(rng, 100);
        const auto layer = random_layer(rng, 1 + uniform_below(rng, 30), d, 1 + uniform_below(rng, d));
        const auto c = from_dense(layer.masked);
        std::stringstream ss;
        write_cfin(ss, c);
        const auto back = read_cfin(ss);
        ASSERT_EQ(back, c);
        std::ostringstream again;
        write_cfin(again, back);
        ASSERT_EQ(again.str(), ss.str());
    }
}

TEST(Cfin, CorruptStreamsRejected) {
    DenseMaskedMatrix<float> m(3, 5);
    for (std::size_t r = 0; r < 3; ++r) {
        m.set(r, r, 1.0f);
        m.set(r, r + 2, 2.0f);
    }
    std::ostringstream os;
    write_cfin(os, from_dense(m));
    const std::string good = os.str();

    auto code_of = [](std::string bytes) {
        std::istringstream is(bytes);
        try {
            read_cfin(is);
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::IoError;
    };
    EXPECT_EQ(code_of(good), Errc::IoError);  // sentinel: parses

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(code_of(bad_magic), Errc::FormatError);

    std::string bad_version = good;
    bad_version[4] = 2;
    EXPECT_EQ(code_of(bad_version), Errc::FormatError);

    EXPECT_EQ(code_of(good.substr(0, good.size() - 1)), Errc::FormatError);
    EXPECT_EQ(code_of(good.substr(0, 20)), Errc::FormatError);

    std::string unsorted = good;  // swap row 0's two column indices
    std::swap_ranges(unsorted.begin() + 32, unsorted.begin() + 36, unsorted.begin() + 36);
    EXPECT_EQ(code_of(unsorted), Errc::FormatError);

    std::string out_of_range = good;
    out_of_range[36] = 9;  // row 0 second column -> 9 >= d
    EXPECT_NE(code_of(out_of_range), Errc::IoError);
}
