#pragma once
// Register-tiled linear-layer kernels over row-major buffers. Activations
// are (n_rows x in) with one token instance per row; weights are
// (out x in). The tiles keep several independent accumulator chains alive
// so FMA latency is hidden, while the expression trees stay fixed so
// results are deterministic and NaN-propagating without -ffast-math.

#include <cstddef>

namespace fhrl::kernels {

inline double dot_k(const double* a, const double* b, std::size_t k) {
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= k; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    double tail = 0.0;
    for (; i < k; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
           ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// y += c * x
inline void axpy_k(double c, const double* x, double* y, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) y[i] += c * x[i];
}

namespace detail {

// 4 activation rows x 2 weight rows, eight accumulator vectors.
inline void tile4x2(const double* x0, const double* x1, const double* x2, const double* x3,
                    const double* w0, const double* w1, std::size_t k, double out[8]) {
    double a00[8] = {0}, a01[8] = {0}, a10[8] = {0}, a11[8] = {0};
    double a20[8] = {0}, a21[8] = {0}, a30[8] = {0}, a31[8] = {0};
    std::size_t i = 0;
    for (; i + 8 <= k; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            const double wv0 = w0[i + j], wv1 = w1[i + j];
            const double xv0 = x0[i + j], xv1 = x1[i + j];
            const double xv2 = x2[i + j], xv3 = x3[i + j];
            a00[j] += xv0 * wv0;
            a01[j] += xv0 * wv1;
            a10[j] += xv1 * wv0;
            a11[j] += xv1 * wv1;
            a20[j] += xv2 * wv0;
            a21[j] += xv2 * wv1;
            a30[j] += xv3 * wv0;
            a31[j] += xv3 * wv1;
        }
    }
    double t[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (; i < k; ++i) {
        const double wv0 = w0[i], wv1 = w1[i];
        t[0] += x0[i] * wv0;
        t[1] += x0[i] * wv1;
        t[2] += x1[i] * wv0;
        t[3] += x1[i] * wv1;
        t[4] += x2[i] * wv0;
        t[5] += x2[i] * wv1;
        t[6] += x3[i] * wv0;
        t[7] += x3[i] * wv1;
    }
    auto red = [](const double a[8]) {
        return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    };
    out[0] = red(a00) + t[0];
    out[1] = red(a01) + t[1];
    out[2] = red(a10) + t[2];
    out[3] = red(a11) + t[3];
    out[4] = red(a20) + t[4];
    out[5] = red(a21) + t[5];
    out[6] = red(a30) + t[6];
    out[7] = red(a31) + t[7];
}

// two destination rows += coefficient trees over 4 shared source rows
inline void acc2x4(double* d0, double* d1, double c00, double c01, double c02, double c03,
                   double c10, double c11, double c12, double c13, const double* s0,
                   const double* s1, const double* s2, const double* s3, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
        const double v0 = s0[i], v1 = s1[i], v2 = s2[i], v3 = s3[i];
        d0[i] += (c00 * v0 + c01 * v1) + (c02 * v2 + c03 * v3);
        d1[i] += (c10 * v0 + c11 * v1) + (c12 * v2 + c13 * v3);
    }
}

// 2 activation rows x 2 weight rows.
inline void tile2x2(const double* x0, const double* x1, const double* w0, const double* w1,
                    std::size_t k, double out[4]) {
    double a00[8] = {0}, a01[8] = {0}, a10[8] = {0}, a11[8] = {0};
    std::size_t i = 0;
    for (; i + 8 <= k; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            const double wv0 = w0[i + j], wv1 = w1[i + j];
            const double xv0 = x0[i + j], xv1 = x1[i + j];
            a00[j] += xv0 * wv0;
            a01[j] += xv0 * wv1;
            a10[j] += xv1 * wv0;
            a11[j] += xv1 * wv1;
        }
    }
    double t[4] = {0, 0, 0, 0};
    for (; i < k; ++i) {
        t[0] += x0[i] * w0[i];
        t[1] += x0[i] * w1[i];
        t[2] += x1[i] * w0[i];
        t[3] += x1[i] * w1[i];
    }
    auto red = [](const double a[8]) {
        return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    };
    out[0] = red(a00) + t[0];
    out[1] = red(a01) + t[1];
    out[2] = red(a10) + t[2];
    out[3] = red(a11) + t[3];
}

}  // namespace detail

// Y (n x out) = X (n x in) . W^T, W stored (out x in).
inline void linear_forward(const double* x, std::size_t n, std::size_t in, const double* w,
                           std::size_t out, double* y) {
    std::size_t r = 0;
    for (; r + 4 <= n; r += 4) {
        const double* x0 = x + r * in;
        const double* x1 = x0 + in;
        const double* x2 = x1 + in;
        const double* x3 = x2 + in;
        std::size_t i = 0;
        for (; i + 2 <= out; i += 2) {
            double acc[8];
            detail::tile4x2(x0, x1, x2, x3, w + i * in, w + (i + 1) * in, in, acc);
            y[(r + 0) * out + i] = acc[0];
            y[(r + 0) * out + i + 1] = acc[1];
            y[(r + 1) * out + i] = acc[2];
            y[(r + 1) * out + i + 1] = acc[3];
            y[(r + 2) * out + i] = acc[4];
            y[(r + 2) * out + i + 1] = acc[5];
            y[(r + 3) * out + i] = acc[6];
            y[(r + 3) * out + i + 1] = acc[7];
        }
        for (; i < out; ++i) {
            const double* wrow = w + i * in;
            y[(r + 0) * out + i] = dot_k(x0, wrow, in);
            y[(r + 1) * out + i] = dot_k(x1, wrow, in);
            y[(r + 2) * out + i] = dot_k(x2, wrow, in);
            y[(r + 3) * out + i] = dot_k(x3, wrow, in);
        }
    }
    if (r + 2 <= n) {
        const double* x0 = x + r * in;
        const double* x1 = x0 + in;
        std::size_t i = 0;
        for (; i + 2 <= out; i += 2) {
            double acc[4];
            detail::tile2x2(x0, x1, w + i * in, w + (i + 1) * in, in, acc);
            y[(r + 0) * out + i] = acc[0];
            y[(r + 0) * out + i + 1] = acc[1];
            y[(r + 1) * out + i] = acc[2];
            y[(r + 1) * out + i + 1] = acc[3];
        }
        for (; i < out; ++i) {
            y[(r + 0) * out + i] = dot_k(x0, w + i * in, in);
            y[(r + 1) * out + i] = dot_k(x1, w + i * in, in);
        }
        r += 2;
    }
    for (; r < n; ++r)
        for (std::size_t i = 0; i < out; ++i)
            y[r * out + i] = dot_k(x + r * in, w + i * in, in);
}

// dX (n x in) += dY (n x out) . W (out x in)
inline void linear_backward_input(const double* dy, std::size_t n, std::size_t out,
                                  const double* w, std::size_t in, double* dx) {
    std::size_t r = 0;
    for (; r + 2 <= n; r += 2) {
        double* d0 = dx + r * in;
        double* d1 = d0 + in;
        const double* dy0 = dy + r * out;
        const double* dy1 = dy0 + out;
        std::size_t i = 0;
        for (; i + 4 <= out; i += 4) {
            detail::acc2x4(d0, d1, dy0[i], dy0[i + 1], dy0[i + 2], dy0[i + 3], dy1[i],
                           dy1[i + 1], dy1[i + 2], dy1[i + 3], w + i * in, w + (i + 1) * in,
                           w + (i + 2) * in, w + (i + 3) * in, in);
        }
        for (; i < out; ++i) {
            axpy_k(dy0[i], w + i * in, d0, in);
            axpy_k(dy1[i], w + i * in, d1, in);
        }
    }
    for (; r < n; ++r)
        for (std::size_t i = 0; i < out; ++i)
            axpy_k(dy[r * out + i], w + i * in, dx + r * in, in);
}

// dW (out x in) += dY^T (n x out) . X (n x in)
inline void linear_backward_weight(const double* dy, std::size_t n, std::size_t out,
                                   const double* x, std::size_t in, double* dw) {
    std::size_t i = 0;
    for (; i + 2 <= out; i += 2) {
        double* d0 = dw + i * in;
        double* d1 = d0 + in;
        std::size_t r = 0;
        for (; r + 4 <= n; r += 4) {
            detail::acc2x4(d0, d1, dy[(r + 0) * out + i], dy[(r + 1) * out + i],
                           dy[(r + 2) * out + i], dy[(r + 3) * out + i],
                           dy[(r + 0) * out + i + 1], dy[(r + 1) * out + i + 1],
                           dy[(r + 2) * out + i + 1], dy[(r + 3) * out + i + 1], x + (r + 0) * in,
                           x + (r + 1) * in, x + (r + 2) * in, x + (r + 3) * in, in);
        }
        for (; r < n; ++r) {
            axpy_k(dy[r * out + i], x + r * in, d0, in);
            axpy_k(dy[r * out + i + 1], x + r * in, d1, in);
        }
    }
    for (; i < out; ++i) {
        double* drow = dw + i * in;
        for (std::size_t r = 0; r < n; ++r) axpy_k(dy[r * out + i], x + r * in, drow, in);
    }
}

}  // namespace fhrl::kernels
