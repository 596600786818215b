#pragma once
// Test-only reference implementations. These deliberately take the slow,
// obvious route (characteristic polynomials, explicit covariance matrices,
// materialized Kronecker products, complex-arithmetic DFT) so they stay
// independent of the library code paths they are used to check.

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fhrl/numerics.hpp"

namespace oracles {

using fhrl::Matrix;
using fhrl::Vector;

// Characteristic polynomial coefficients by Faddeev-LeVerrier:
// p(x) = x^n + c[1] x^(n-1) + ... + c[n].
inline Vector char_poly(const Matrix& a) {
    const std::size_t n = a.rows;
    Matrix m = Matrix::identity(n);
    Vector c(n + 1, 0.0);
    c[0] = 1.0;
    for (std::size_t k = 1; k <= n; ++k) {
        Matrix am = fhrl::matmul(a, m);
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i) tr += am(i, i);
        c[k] = -tr / static_cast<double>(k);
        m = am;
        for (std::size_t i = 0; i < n; ++i) m(i, i) += c[k];
    }
    return c;
}

inline double poly_eval(const Vector& c, double x) {
    double v = 0.0;
    for (double ck : c) v = v * x + ck;
    return v;
}

// All real roots of the characteristic polynomial of a symmetric matrix,
// isolated by dense sign-change scanning over the Gershgorin interval and
// refined by bisection. Assumes distinct eigenvalues (random inputs).
inline Vector sym_eigenvalues_by_bisection(const Matrix& a) {
    const std::size_t n = a.rows;
    const Vector c = char_poly(a);

    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double radius = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) radius += std::abs(a(i, j));
        lo = std::min(lo, a(i, i) - radius);
        hi = std::max(hi, a(i, i) + radius);
    }
    lo -= 1e-6;
    hi += 1e-6;

    const int grid = 200000;
    Vector roots;
    double xprev = lo;
    double fprev = poly_eval(c, lo);
    for (int g = 1; g <= grid; ++g) {
        const double x = lo + (hi - lo) * static_cast<double>(g) / grid;
        const double f = poly_eval(c, x);
        if ((fprev < 0.0 && f > 0.0) || (fprev > 0.0 && f < 0.0)) {
            double a0 = xprev, b0 = x, fa = fprev;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (a0 + b0);
                const double fm = poly_eval(c, mid);
                if ((fa < 0.0) == (fm < 0.0)) {
                    a0 = mid;
                    fa = fm;
                } else {
                    b0 = mid;
                }
            }
            roots.push_back(0.5 * (a0 + b0));
        } else if (f == 0.0) {
            roots.push_back(x);
        }
        xprev = x;
        fprev = f;
    }
    if (roots.size() != n)
        throw std::runtime_error("bisection oracle: did not isolate all eigenvalues");
    std::sort(roots.begin(), roots.end(), std::greater<double>());
    return roots;
}

// DFT magnitudes via std::complex accumulation.
inline Vector dft_magnitude_reference(const Vector& s) {
    const std::size_t n = s.size();
    Vector mag(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t t = 0; t < n; ++t) {
            acc += s[t] * std::polar(1.0, -2.0 * M_PI * double(k) * double(t) / double(n));
        }
        mag[k] = std::abs(acc);
    }
    return mag;
}

// Orthonormal matrix from Gram-Schmidt over random entries.
inline Matrix random_orthonormal(std::size_t n, fhrl::Rng& rng) {
    Matrix q(n, n);
    for (std::size_t col = 0; col < n; ++col) {
        Vector v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
        for (std::size_t prev = 0; prev < col; ++prev) {
            double proj = 0.0;
            for (std::size_t i = 0; i < n; ++i) proj += v[i] * q(i, prev);
            for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q(i, prev);
        }
        const double nv = fhrl::norm2(v);
        for (std::size_t i = 0; i < n; ++i) q(i, col) = v[i] / nv;
    }
    return q;
}

// Explicit n^2 x n^2 Kronecker product.
inline Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows * b.rows, a.cols * b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            for (std::size_t p = 0; p < b.rows; ++p)
                for (std::size_t q = 0; q < b.cols; ++q)
                    k(i * b.rows + p, j * b.cols + q) = a(i, j) * b(p, q);
    return k;
}

// Row-major vec of a matrix.
inline Vector vec(const Matrix& m) { return m.data; }

}  // namespace oracles
