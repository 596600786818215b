#pragma once
// Geometry of the learned reentry projection: overall magnitude,
// singular-spectrum anisotropy, and how much of the operator lives inside
// the token-embedding subspace.

#include <cmath>
#include <stdexcept>

#include "fhrl/numerics.hpp"

namespace fhrl {

struct WrReport {
    double frobenius = 0.0;
    double anisotropy = 0.0;        // sigma_1 / mean(sigma)
    double alignment = 0.0;         // in [0, 1]
    double alignment_80 = 0.0;      // sensitivity at 80% / 95% mass truncation
    double alignment_95 = 0.0;
    std::size_t k_eff = 0;          // token-subspace rank at the 90% rule
    Vector singular_values;         // descending
};

inline double wr_frobenius(const Matrix& wr) { return frobenius_norm(wr); }

// sigma_1 over the mean of all d singular values; 1 = isotropic, d = rank 1.
inline double wr_anisotropy(const Matrix& wr) {
    const Vector sv = svd_values(wr);
    double sum = 0.0;
    for (double s : sv) sum += s;
    if (sum == 0.0) throw std::invalid_argument("wr_anisotropy: zero matrix");
    return sv[0] / (sum / static_cast<double>(sv.size()));
}

// Eigendecomposition of E^T E; eigenvalues are squared singular values of
// the embedding and eigenvectors its right-singular directions.
inline SymEig embedding_gram_eig(const Matrix& embedding) {
    if (frobenius_norm(embedding) == 0.0)
        throw std::invalid_argument("token subspace: zero embedding");
    const std::size_t d = embedding.cols;
    Matrix gram(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < embedding.rows; ++k)
                s += embedding(k, i) * embedding(k, j);
            gram(i, j) = s;
            gram(j, i) = s;
        }
    return sym_eig(gram);
}

inline Matrix leading_columns(const Matrix& m, std::size_t k) {
    Matrix out(m.rows, k);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < k; ++j) out(i, j) = m(i, j);
    return out;
}

// Right-singular directions of the embedding capturing `mass_fraction` of
// the squared singular mass. Columns of the returned matrix span the
// token subspace.
inline Matrix token_subspace_basis(const Matrix& embedding, double mass_fraction,
                                   std::size_t* k_eff_out = nullptr) {
    const SymEig eig = embedding_gram_eig(embedding);
    const std::size_t d = embedding.cols;

    double total = 0.0;
    for (double v : eig.values) total += std::max(0.0, v);
    std::size_t k_eff = 0;
    double acc = 0.0;
    while (k_eff < d && acc < mass_fraction * total) {
        acc += std::max(0.0, eig.values[k_eff]);
        ++k_eff;
    }
    if (k_eff == 0) k_eff = 1;
    if (k_eff_out) *k_eff_out = k_eff;
    return leading_columns(eig.vectors, k_eff);
}

// ||P wr P||_F / ||wr||_F with P = B B^T the orthogonal projector onto the
// token subspace. Equals ||(P (x) P) vec(wr)|| / ||vec(wr)|| by the
// vec-Kronecker identity, without materializing the d^2 x d^2 lift.
inline double token_alignment_with_basis(const Matrix& wr, const Matrix& basis) {
    const double denom = frobenius_norm(wr);
    if (denom == 0.0) throw std::invalid_argument("token_alignment: zero wr");
    // C = B^T wr B  (k x k); ||P wr P||_F = ||C||_F since B has orthonormal columns
    const Matrix bt_wr = matmul(transpose(basis), wr);       // k x d
    const Matrix c = matmul(bt_wr, basis);                   // k x k
    return frobenius_norm(c) / denom;
}

// Alignment against the top-k_eff right-singular directions of the embedding.
inline double token_alignment(const Matrix& wr, const Matrix& embedding, std::size_t k_eff) {
    if (k_eff == 0 || k_eff > std::min(embedding.rows, embedding.cols))
        throw std::invalid_argument("token_alignment: k_eff out of range");
    const SymEig eig = embedding_gram_eig(embedding);
    return token_alignment_with_basis(wr, leading_columns(eig.vectors, k_eff));
}

inline WrReport analyze_wr(const Matrix& wr, const Matrix& embedding,
                           double mass_fraction = 0.9) {
    WrReport rep;
    rep.frobenius = wr_frobenius(wr);
    rep.singular_values = svd_values(wr);
    rep.anisotropy = wr_anisotropy(wr);
    rep.alignment = token_alignment_with_basis(
        wr, token_subspace_basis(embedding, mass_fraction, &rep.k_eff));
    rep.alignment_80 =
        token_alignment_with_basis(wr, token_subspace_basis(embedding, 0.80, nullptr));
    rep.alignment_95 =
        token_alignment_with_basis(wr, token_subspace_basis(embedding, 0.95, nullptr));
    return rep;
}

}  // namespace fhrl
