#pragma once

#include <cmath>
#include <vector>

#include "abw/common.hpp"
#include "abw/tensor.hpp"

namespace abw {
namespace linalg {

// Small dense helpers for the symmetric positive-definite systems used by
// the OOD gate and the model priors. Dimensions stay <= a few dozen, so
// plain triple loops are fine.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double aip = a.at(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
        }
    return out;
}

inline std::vector<double> matvec(const Tensor& a, const std::vector<double>& x) {
    require(a.cols() == x.size(), "matvec: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline std::vector<double> matvec_t(const Tensor& a, const std::vector<double>& x) {
    require(a.rows() == x.size(), "matvec_t: dimension mismatch");
    std::vector<double> y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double xi = x[i];
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a.at(i, j) * xi;
    }
    return y;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out = Tensor::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// Lower Cholesky factor of an SPD matrix. Throws NumericFailure if the
// matrix is not positive definite.
inline Tensor cholesky(const Tensor& a) {
    require(a.rows() == a.cols(), "cholesky: matrix must be square");
    std::size_t n = a.rows();
    Tensor l = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s))
                    throw NumericFailure("cholesky: matrix not positive definite");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return l;
}

inline std::vector<double> solve_lower(const Tensor& l, const std::vector<double>& b) {
    std::size_t n = l.rows();
    require(b.size() == n, "solve_lower: dimension mismatch");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < i; ++j) s -= l.at(i, j) * x[j];
        x[i] = s / l.at(i, i);
    }
    return x;
}

inline std::vector<double> solve_upper_from_lower_t(const Tensor& l, const std::vector<double>& b) {
    // solves L^T x = b given the lower factor L
    std::size_t n = l.rows();
    require(b.size() == n, "solve_upper: dimension mismatch");
    std::vector<double> x(n);
    for (std::size_t ii = n; ii > 0; --ii) {
        std::size_t i = ii - 1;
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= l.at(j, i) * x[j];
        x[i] = s / l.at(i, i);
    }
    return x;
}

// Solves A x = b for SPD A with known Cholesky factor L (A = L L^T).
inline std::vector<double> cholesky_solve(const Tensor& l, const std::vector<double>& b) {
    return solve_upper_from_lower_t(l, solve_lower(l, b));
}

inline Tensor spd_inverse(const Tensor& a) {
    Tensor l = cholesky(a);
    std::size_t n = a.rows();
    Tensor inv = Tensor::matrix(n, n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        auto col = cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv.at(i, j) = col[i];
        e[j] = 0.0;
    }
    return inv;
}

inline double log_det_from_cholesky(const Tensor& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l.at(i, i));
    return 2.0 * s;
}

// Determinant by Gaussian elimination with partial pivoting; used only by
// test oracles on tiny matrices, but kept here with the other routines.
inline double det(Tensor a) {
    require(a.rows() == a.cols(), "det: matrix must be square");
    std::size_t n = a.rows();
    double d = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a.at(r, c)) > std::fabs(a.at(piv, c))) piv = r;
        if (a.at(piv, c) == 0.0) return 0.0;
        if (piv != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a.at(piv, j), a.at(c, j));
            d = -d;
        }
        d *= a.at(c, c);
        for (std::size_t r = c + 1; r < n; ++r) {
            double f = a.at(r, c) / a.at(c, c);
            for (std::size_t j = c; j < n; ++j) a.at(r, j) -= f * a.at(c, j);
        }
    }
    return d;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace linalg
}  // namespace abw
