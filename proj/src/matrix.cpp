#include "m4/matrix.hpp"

#include <cmath>

namespace m4 {

Matrix Matrix::random_uniform(std::size_t r, std::size_t c, rng& gen, double lo, double hi) {
    Matrix m(r, c);
    for (auto& v : m.data) v = gen.uniform(lo, hi);
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

bool Matrix::finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) fail(errc::dimension_mismatch, "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

bool approx_equal(const Matrix& a, const Matrix& b, double tol) {
    return a.same_shape(b) && max_abs_diff(a, b) <= tol;
}

}  // namespace m4
