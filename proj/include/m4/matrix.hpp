#pragma once

#include <cstddef>
#include <vector>

#include "m4/util.hpp"

namespace m4 {

// Dense row-major matrix of doubles. All model math runs on this type;
// quantized formats are storage-only and widen back to Matrix for compute.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    static Matrix random_uniform(std::size_t r, std::size_t c, rng& gen, double lo, double hi);
    static Matrix identity(std::size_t n);

    // all entries finite (the Matrix invariant)
    bool finite() const;
};

bool approx_equal(const Matrix& a, const Matrix& b, double tol);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace m4
