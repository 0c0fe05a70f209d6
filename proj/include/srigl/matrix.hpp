// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srigl/error.hpp"

namespace srigl {

/// Row-major dense matrix. Activations are stored features x batch.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix&) const = default;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) fail(Errc::DimensionMismatch, what);
}

/// Plain dense product W (n x d) * V (d x b). Baseline for the timing bench.
template <typename T>
Matrix<T> dense_matmul(const Matrix<T>& w, const Matrix<T>& v) {
    require_dims(w.cols == v.rows, "dense_matmul: inner dimensions differ");
    Matrix<T> out(w.rows, v.cols);
    for (std::size_t r = 0; r < w.rows; ++r) {
        T* dst = out.data.data() + r * out.cols;
        const T* wr = w.data.data() + r * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) {
            const T a = wr[j];
            const T* src = v.data.data() + j * v.cols;
            for (std::size_t c = 0; c < v.cols; ++c) dst[c] += a * src[c];
        }
    }
    return out;
}

}  // namespace srigl
