// SPDX-License-Identifier: Apache-2.0
//
// Constant fan-in sparse matrices in condensed form.
//
// An n x d matrix whose active rows all hold exactly k non-zeros is stored as
// two n x k planes: the values and their column indices. The product with a
// vector is then k gather-multiply-accumulate passes:
//
//     out = sum_{i<k} values[:, i] * v[cols[:, i]]
//
// Planes are held slot-major (k planes of length n) so each pass streams over
// the rows. Ablated rows stay in storage, flagged inactive, with zero values
// and the placeholder indices 0..k-1.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "srigl/error.hpp"
#include "srigl/matrix.hpp"

namespace srigl {

/// Dense weights plus a boolean mask of the same shape. Reference form of a
/// sparse layer and the oracle for the condensed kernels.
template <typename T>
struct DenseMaskedMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> weights;
    std::vector<std::uint8_t> mask;

    DenseMaskedMatrix() = default;
    DenseMaskedMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), weights(r * c, T{}), mask(r * c, 0) {}

    T& weight(std::size_t r, std::size_t c) { return weights[r * cols + c]; }
    const T& weight(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
    bool active(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }

    void set(std::size_t r, std::size_t c, T value) {
        weights[r * cols + c] = value;
        mask[r * cols + c] = 1;
    }
    void clear(std::size_t r, std::size_t c) {
        weights[r * cols + c] = T{};
        mask[r * cols + c] = 0;
    }

    std::size_t row_nnz(std::size_t r) const {
        return static_cast<std::size_t>(std::count(mask.begin() + r * cols, mask.begin() + (r + 1) * cols, 1));
    }
    std::size_t nnz() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

    /// Zeroes every weight outside the mask.
    void apply_mask() {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (!mask[i]) weights[i] = T{};
    }

    bool operator==(const DenseMaskedMatrix&) const = default;
};

template <typename T>
class BasicCondensedMatrix {
public:
    BasicCondensedMatrix() = default;

    /// Builds from row-major n x k planes. Entries of a row may come in any
    /// order; they are sorted by column. Inactive rows are canonicalised.
    static BasicCondensedMatrix from_rows(std::size_t n, std::size_t d, std::size_t k,
                                          std::span<const std::uint32_t> cols_row_major,
                                          std::span<const T> values_row_major,
                                          std::span<const std::uint8_t> active_rows) {
        if (k > d) fail(Errc::DimensionMismatch, "fan-in k=" + std::to_string(k) + " exceeds d=" + std::to_string(d));
        if (cols_row_major.size() != n * k || values_row_major.size() != n * k || active_rows.size() != n)
            fail(Errc::DimensionMismatch, "condensed planes must be n x k with n active flags");

        BasicCondensedMatrix m;
        m.n_ = n;
        m.d_ = d;
        m.k_ = k;
        m.values_.assign(n * k, T{});
        m.cols_.assign(n * k, 0);
        m.active_.assign(active_rows.begin(), active_rows.end());

        std::vector<std::pair<std::uint32_t, T>> entries(k);
        for (std::size_t r = 0; r < n; ++r) {
            if (!m.active_[r]) {
                for (std::size_t i = 0; i < k; ++i) m.cols_[i * n + r] = static_cast<std::uint32_t>(i);
                continue;
            }
            m.active_[r] = 1;
            for (std::size_t i = 0; i < k; ++i) {
                const std::uint32_t c = cols_row_major[r * k + i];
                if (c >= d)
                    fail(Errc::IndexOutOfRange,
                         "row " + std::to_string(r) + " column " + std::to_string(c) + " >= d=" + std::to_string(d));
                entries[i] = {c, values_row_major[r * k + i]};
            }
            std::sort(entries.begin(), entries.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            for (std::size_t i = 0; i < k; ++i) {
                if (i > 0 && entries[i].first == entries[i - 1].first)
                    fail(Errc::DuplicateIndex,
                         "row " + std::to_string(r) + " repeats column " + std::to_string(entries[i].first));
                m.cols_[i * n + r] = entries[i].first;
                m.values_[i * n + r] = entries[i].second;
            }
        }
        return m;
    }

    std::size_t rows() const { return n_; }
    std::size_t dense_cols() const { return d_; }
    std::size_t fan_in() const { return k_; }

    bool is_active(std::size_t r) const { return active_[r] != 0; }
    std::size_t n_active() const { return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1)); }
    std::span<const std::uint8_t> active_rows() const { return active_; }

    T value(std::size_t r, std::size_t slot) const { return values_[slot * n_ + r]; }
    std::uint32_t column(std::size_t r, std::size_t slot) const { return cols_[slot * n_ + r]; }

    std::span<const T> value_plane(std::size_t slot) const { return {values_.data() + slot * n_, n_}; }
    std::span<const std::uint32_t> index_plane(std::size_t slot) const { return {cols_.data() + slot * n_, n_}; }

    /// Mutable view of the values; indices stay fixed.
    std::span<T> value_plane(std::size_t slot) { return {values_.data() + slot * n_, n_}; }

    bool operator==(const BasicCondensedMatrix&) const = default;

private:
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::size_t k_ = 0;
    std::vector<T> values_;             // slot-major: values_[slot * n + row]
    std::vector<std::uint32_t> cols_;   // slot-major, ascending within a row
    std::vector<std::uint8_t> active_;  // 1 = active
};

using CondensedMatrix = BasicCondensedMatrix<float>;

/// Condenses a masked matrix. Rows with an empty mask are taken as ablated;
/// every other row must carry the same popcount.
template <typename T>
BasicCondensedMatrix<T> from_dense(const DenseMaskedMatrix<T>& masked) {
    const std::size_t n = masked.rows;
    const std::size_t d = masked.cols;
    if (masked.weights.size() != n * d || masked.mask.size() != n * d)
        fail(Errc::IndexOutOfRange, "weights/mask planes do not match the declared shape");

    std::size_t k = 0;
    bool seen = false;
    std::vector<std::uint8_t> active(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t pop = masked.row_nnz(r);
        if (pop == 0) continue;
        if (!seen) {
            k = pop;
            seen = true;
        } else if (pop != k) {
            fail(Errc::NonUniformFanIn,
                 "row " + std::to_string(r) + " has " + std::to_string(pop) + " non-zeros, expected " + std::to_string(k));
        }
        active[r] = 1;
    }

    std::vector<std::uint32_t> cols(n * k, 0);
    std::vector<T> vals(n * k, T{});
    for (std::size_t r = 0; r < n; ++r) {
        if (!active[r]) continue;
        std::size_t slot = 0;
        for (std::size_t c = 0; c < d; ++c) {
            if (!masked.active(r, c)) continue;
            cols[r * k + slot] = static_cast<std::uint32_t>(c);
            vals[r * k + slot] = masked.weight(r, c);
            ++slot;
        }
    }
    return BasicCondensedMatrix<T>::from_rows(n, d, k, cols, vals, active);
}

template <typename T>
DenseMaskedMatrix<T> to_dense(const BasicCondensedMatrix<T>& c) {
    DenseMaskedMatrix<T> out(c.rows(), c.dense_cols());
    for (std::size_t r = 0; r < c.rows(); ++r) {
        if (!c.is_active(r)) continue;
        for (std::size_t i = 0; i < c.fan_in(); ++i) out.set(r, c.column(r, i), c.value(r, i));
    }
    return out;
}

template <typename T>
std::vector<T> condensed_matvec(const BasicCondensedMatrix<T>& c, std::span<const T> v) {
    require_dims(v.size() == c.dense_cols(), "condensed_matvec: |v|=" + std::to_string(v.size()) +
                                                 " but d=" + std::to_string(c.dense_cols()));
    const std::size_t n = c.rows();
    std::vector<T> out(n, T{});
    for (std::size_t i = 0; i < c.fan_in(); ++i) {
        const T* w = c.value_plane(i).data();
        const std::uint32_t* idx = c.index_plane(i).data();
        for (std::size_t r = 0; r < n; ++r) out[r] += w[r] * v[idx[r]];
    }
    for (std::size_t r = 0; r < n; ++r)
        if (!c.is_active(r)) out[r] = T{};
    return out;
}

namespace detail {

template <typename T>
void condensed_matmul_columns(const BasicCondensedMatrix<T>& c, const Matrix<T>& v, Matrix<T>& out,
                              std::size_t col_begin, std::size_t col_end) {
    const std::size_t n = c.rows();
    const std::size_t b = v.cols;
    for (std::size_t i = 0; i < c.fan_in(); ++i) {
        const T* w = c.value_plane(i).data();
        const std::uint32_t* idx = c.index_plane(i).data();
        for (std::size_t r = 0; r < n; ++r) {
            const T a = w[r];
            const T* src = v.data.data() + static_cast<std::size_t>(idx[r]) * b;
            T* dst = out.data.data() + r * b;
            for (std::size_t j = col_begin; j < col_end; ++j) dst[j] += a * src[j];
        }
    }
}

}  // namespace detail

/// Batched product: `v` is d x b (one input per column), result is n x b.
/// With threads > 1 the batch columns are split into contiguous blocks; the
/// per-element accumulation order is unchanged, so the result is bit-identical
/// to the single-threaded one.
template <typename T>
Matrix<T> condensed_matmul(const BasicCondensedMatrix<T>& c, const Matrix<T>& v, unsigned threads = 1) {
    require_dims(v.rows == c.dense_cols(), "condensed_matmul: V has " + std::to_string(v.rows) +
                                               " rows but d=" + std::to_string(c.dense_cols()));
    require_dims(v.cols >= 1, "condensed_matmul: batch must be >= 1");
    Matrix<T> out(c.rows(), v.cols);
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, v.cols);
    if (workers == 1) {
        detail::condensed_matmul_columns(c, v, out, 0, v.cols);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (v.cols + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(v.cols, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] { detail::condensed_matmul_columns(c, v, out, lo, hi); });
        }
    }
    for (std::size_t r = 0; r < c.rows(); ++r)
        if (!c.is_active(r)) std::fill_n(out.data.begin() + r * out.cols, out.cols, T{});
    return out;
}

/// (W .* mask) v, ascending column order. Oracle for condensed_matvec.
template <typename T>
std::vector<T> dense_masked_matvec(const DenseMaskedMatrix<T>& m, std::span<const T> v) {
    require_dims(v.size() == m.cols, "dense_masked_matvec: dimension mismatch");
    std::vector<T> out(m.rows, T{});
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c)
            if (m.active(r, c)) out[r] += m.weight(r, c) * v[c];
    return out;
}

template <typename T>
Matrix<T> dense_masked_matmul(const DenseMaskedMatrix<T>& m, const Matrix<T>& v) {
    require_dims(v.rows == m.cols, "dense_masked_matmul: dimension mismatch");
    Matrix<T> out(m.rows, v.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (!m.active(r, c)) continue;
            const T a = m.weight(r, c);
            for (std::size_t j = 0; j < v.cols; ++j) out(r, j) += a * v(c, j);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Flat binary layout ("CFIN"), all integers little-endian:
//
//   offset 0   magic    4 bytes  'C' 'F' 'I' 'N'
//          4   version  u32      = 1
//          8   n        u64
//         16   d        u64
//         24   k        u64
//         32   col_indices  n*k u32, row-major
//              values       n*k f32 (IEEE-754 binary32), row-major
//              active_rows  ceil(n/8) bytes, row r is bit (r % 8) of byte r / 8
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kCfinMagic{'C', 'F', 'I', 'N'};
inline constexpr std::uint32_t kCfinVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
    static_assert(std::is_unsigned_v<U>);
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
    os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
        fail(Errc::FormatError, "truncated CFIN stream");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace detail

/// Values are narrowed to f32 on write.
template <typename T>
void write_cfin(std::ostream& os, const BasicCondensedMatrix<T>& c) {
    os.write(kCfinMagic.data(), kCfinMagic.size());
    detail::put_le<std::uint32_t>(os, kCfinVersion);
    detail::put_le<std::uint64_t>(os, c.rows());
    detail::put_le<std::uint64_t>(os, c.dense_cols());
    detail::put_le<std::uint64_t>(os, c.fan_in());
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t i = 0; i < c.fan_in(); ++i) detail::put_le<std::uint32_t>(os, c.column(r, i));
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t i = 0; i < c.fan_in(); ++i)
            detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(c.value(r, i))));
    std::vector<std::uint8_t> bitmap((c.rows() + 7) / 8, 0);
    for (std::size_t r = 0; r < c.rows(); ++r)
        if (c.is_active(r)) bitmap[r / 8] |= static_cast<std::uint8_t>(1u << (r % 8));
    os.write(reinterpret_cast<const char*>(bitmap.data()), static_cast<std::streamsize>(bitmap.size()));
    if (!os) fail(Errc::IoError, "failed writing CFIN stream");
}

template <typename T = float>
BasicCondensedMatrix<T> read_cfin(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCfinMagic) fail(Errc::FormatError, "bad CFIN magic");
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != kCfinVersion) fail(Errc::FormatError, "unsupported CFIN version " + std::to_string(version));
    const auto n = detail::get_le<std::uint64_t>(is);
    const auto d = detail::get_le<std::uint64_t>(is);
    const auto k = detail::get_le<std::uint64_t>(is);
    if (k > d) fail(Errc::FormatError, "CFIN header has k > d");
    if (n != 0 && k > (std::uint64_t{1} << 40) / n) fail(Errc::FormatError, "CFIN header is implausibly large");

    std::vector<std::uint32_t> cols(n * k);
    for (auto& c : cols) c = detail::get_le<std::uint32_t>(is);
    std::vector<T> vals(n * k);
    for (auto& v : vals) v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(is)));
    std::vector<std::uint8_t> bitmap((n + 7) / 8);
    if (!is.read(reinterpret_cast<char*>(bitmap.data()), static_cast<std::streamsize>(bitmap.size())))
        fail(Errc::FormatError, "truncated CFIN active bitmap");
    std::vector<std::uint8_t> active(n);
    for (std::size_t r = 0; r < n; ++r) active[r] = (bitmap[r / 8] >> (r % 8)) & 1u;

    for (std::size_t r = 0; r < n; ++r) {
        if (active[r]) {
            for (std::size_t i = 1; i < k; ++i)
                if (cols[r * k + i] <= cols[r * k + i - 1])
                    fail(Errc::FormatError, "CFIN row " + std::to_string(r) + " indices not strictly increasing");
        } else {
            for (std::size_t i = 0; i < k; ++i)
                if (vals[r * k + i] != T{}) fail(Errc::FormatError, "CFIN inactive row carries non-zero values");
        }
    }
    return BasicCondensedMatrix<T>::from_rows(n, d, k, cols, vals, active);
}

}  // namespace srigl
