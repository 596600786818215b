#pragma once
// Dense matrix/vector helpers, a symmetric eigensolver, singular values,
// direct DFT magnitudes, power-iteration spectral radius, and the
// project-wide deterministic RNG. Everything here is plain double
// arithmetic over owned storage; no external algebra library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fhrl {

using Vector = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline bool all_finite(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(const Matrix& m) { return all_finite(m.data); }

inline double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
}

// y += a * x
inline void axpy(double a, const Vector& x, Vector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(Vector& v, double a) {
    for (double& x : v) x *= a;
}

inline Vector matvec(const Matrix& m, const Vector& x) {
    if (m.cols != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
    Vector y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

// y = m^T x
inline Vector matvec_t(const Matrix& m, const Vector& x) {
    if (m.rows != x.size()) throw std::invalid_argument("matvec_t: dimension mismatch");
    Vector y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += r[j] * xi;
    }
    return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// SplitMix64 (Steele/Lea/Flood): a 64-bit counter generator with an
// avalanche output mix. Integer-only state transitions, so the stream is
// identical on every platform for a given seed. Sub-streams are derived by
// mixing (component, step) tags into the seed, which keeps independent
// consumers (per-layer noise, probe sequences, init) decoupled.
// ---------------------------------------------------------------------------
struct Rng {
    std::uint64_t state = 0;

    Rng() = default;
    explicit Rng(std::uint64_t seed) : state(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        return mix(state);
    }

    // 53-bit uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Marsaglia polar; caches the spare deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // Independent stream keyed by (component, step).
    Rng substream(std::uint64_t component, std::uint64_t step = 0) const {
        std::uint64_t s = mix(state + 0x632be59bd9b4e019ULL * (component + 1));
        s = mix(s + 0x9e3779b97f4a7c15ULL * (step + 1));
        return Rng(s);
    }

  private:
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// n i.i.d. N(0, sigma^2) draws; sigma = 0 short-circuits to zeros.
inline Vector gauss(Rng& rng, std::size_t n, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gauss: sigma must be >= 0");
    Vector v(n, 0.0);
    if (sigma == 0.0) return v;
    for (std::size_t i = 0; i < n; ++i) v[i] = sigma * rng.normal();
    return v;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition via cyclic Jacobi rotations. Robust and
// simple at the sizes used here (n <= 192). Eigenvalues are returned in
// descending order with matching eigenvector columns.
// ---------------------------------------------------------------------------
struct SymEig {
    Vector values;    // descending
    Matrix vectors;   // column i is the eigenvector of values[i]
};

inline SymEig sym_eig(const Matrix& m) {
    if (m.rows != m.cols) throw std::invalid_argument("sym_eig: matrix not square");
    const std::size_t n = m.rows;
    double amax = 0.0;
    for (double x : m.data) amax = std::max(amax, std::abs(x));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-9 * amax)
                throw std::invalid_argument("sym_eig: matrix not symmetric");

    Matrix a = m;
    // fold in the transpose so tiny asymmetries do not bias the sweep
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }

    Matrix vecs = Matrix::identity(n);
    const double fro = frobenius_norm(a);
    const double tol = (fro > 0.0 ? 1e-14 * fro : 0.0);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) <= tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                const double app = a(p, p), aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(p, k) = a(k, p);
                    a(k, q) = s * akp + c * akq;
                    a(q, k) = a(k, q);
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs(k, p), vkq = vecs(k, q);
                    vecs(k, p) = c * vkp - s * vkq;
                    vecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Vector diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t l, std::size_t r) { return diag[l] > diag[r]; });

    SymEig out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = diag[idx[i]];
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = vecs(k, idx[i]);
    }
    return out;
}

// Singular values via the Gram matrix: sqrt of eig(M^T M) (or M M^T when
// that side is smaller), descending, clamped at zero.
inline Vector svd_values(const Matrix& m) {
    if (!all_finite(m)) throw std::invalid_argument("svd_values: non-finite input");
    const bool use_cols = m.cols <= m.rows;
    const std::size_t n = use_cols ? m.cols : m.rows;
    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            if (use_cols) {
                for (std::size_t k = 0; k < m.rows; ++k) s += m(k, i) * m(k, j);
            } else {
                for (std::size_t k = 0; k < m.cols; ++k) s += m(i, k) * m(j, k);
            }
            gram(i, j) = s;
            gram(j, i) = s;
        }
    }
    SymEig eig = sym_eig(gram);
    Vector sv(n);
    for (std::size_t i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(0.0, eig.values[i]));
    return sv;
}

// ---------------------------------------------------------------------------
// Direct-summation DFT. Series lengths in this project stay <= 256, so the
// O(N^2) sum is fine and keeps the dependency surface at zero.
// ---------------------------------------------------------------------------
inline std::vector<std::complex<double>> dft_full(const Vector& series) {
    const std::size_t n = series.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            re += series[t] * std::cos(ang);
            im += series[t] * std::sin(ang);
        }
        out[k] = {re, im};
    }
    return out;
}

// Magnitudes for frequency bins 0..N/2 (cycles/sample = k/N).
inline Vector dft_magnitude(const Vector& series) {
    if (series.size() < 4)
        throw std::invalid_argument("dft_magnitude: need at least 4 samples");
    const std::size_t n = series.size();
    const std::size_t half = n / 2;
    Vector mag(half + 1);
    for (std::size_t k = 0; k <= half; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            re += series[t] * std::cos(ang);
            im += series[t] * std::sin(ang);
        }
        mag[k] = std::sqrt(re * re + im * im);
    }
    return mag;
}

// ---------------------------------------------------------------------------
// Largest |eigenvalue| of a linear map, by power iteration with a
// geometric-mean growth estimate over the trailing iterations (stable for
// complex dominant pairs as well).
// ---------------------------------------------------------------------------
inline double power_iteration_radius(const std::function<Vector(const Vector&)>& apply,
                                     std::size_t dim, int iters, Rng& rng) {
    if (iters < 50) throw std::invalid_argument("power_iteration_radius: iters must be >= 50");
    Vector v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal();
    double nv = norm2(v);
    if (nv == 0.0) { v.assign(dim, 0.0); v[0] = 1.0; nv = 1.0; }
    scale(v, 1.0 / nv);

    const int window = std::min(iters / 2, 40);
    double log_sum = 0.0;
    int log_count = 0;
    for (int it = 0; it < iters; ++it) {
        Vector w = apply(v);
        if (w.size() != dim)
            throw std::invalid_argument("power_iteration_radius: map changed dimension");
        const double g = norm2(w);
        if (g == 0.0) return 0.0;
        if (it >= iters - window) {
            log_sum += std::log(g);
            ++log_count;
        }
        scale(w, 1.0 / g);
        v = std::move(w);
    }
    return std::exp(log_sum / static_cast<double>(log_count));
}

}  // namespace fhrl
