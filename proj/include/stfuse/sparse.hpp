#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "stfuse/errors.hpp"

namespace stfuse::sparse {

using SpMat = Eigen::SparseMatrix<double>;
using Index = std::int64_t;

struct Entry {
    Index row;
    Index col;
    double value;
};

/// Symmetric positive-(semi)definite matrix stored as the lower triangle in
/// coordinate form. The upper triangle is implied. Immutable once built.
class SparseSymMatrix {
public:
    SparseSymMatrix() = default;  // empty placeholder; real builds go below

    /// Builds from arbitrary (i, j, v) triplets: entries are mirrored to the
    /// lower triangle and duplicates are accumulated.
    static SparseSymMatrix from_triplets(Index dim, std::span<const Entry> entries);

    static SparseSymMatrix identity(Index dim);
    static SparseSymMatrix diagonal(std::span<const double> d);

    Index dim() const { return dim_; }
    const std::vector<Entry>& entries() const { return entries_; }

    /// Lower-triangle CSC view (what factorization consumes).
    const SpMat& lower() const { return lower_; }
    /// Full symmetric CSC expansion.
    SpMat full() const;

    double max_diagonal() const;

    SparseSymMatrix scaled(double c) const;
    static SparseSymMatrix add(const SparseSymMatrix& a, const SparseSymMatrix& b);
    /// Block-diagonal concatenation in argument order.
    static SparseSymMatrix block_diag(std::span<const SparseSymMatrix> blocks);

private:
    SparseSymMatrix(Index dim, std::vector<Entry> entries);

    Index dim_ = 0;
    std::vector<Entry> entries_;  // row >= col, unique, sorted by (col, row)
    SpMat lower_;
};

/// Q = A kron B for symmetric A, B; entry ((i*dim(B)+k),(j*dim(B)+l)) = A_ij * B_kl.
SparseSymMatrix kronecker(const SparseSymMatrix& a, const SparseSymMatrix& b,
                          Index max_dim = Index{1} << 26);

/// P A P^T = L L^T with a fill-reducing (approximate minimum degree) ordering.
class CholeskyFactor {
public:
    Index dim() const { return static_cast<Index>(perm_.size()); }
    /// Fill-reducing permutation p: permuted index k corresponds to original p[k].
    const std::vector<Index>& permutation() const { return perm_; }
    /// Lower-triangular factor of the permuted matrix (sqrt(D) folded in).
    const SpMat& lower_factor() const { return lower_; }
    double logdet() const { return logdet_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
    /// Solves L^T (P x) = z, i.e. x = P^T L^{-T} z; the sampling back-substitution.
    Eigen::VectorXd half_solve(const Eigen::VectorXd& z) const;

private:
    friend CholeskyFactor cholesky(const SparseSymMatrix& a, double pivot_rel_tol);
    std::vector<Index> perm_;      // original index of permuted position
    std::vector<Index> perm_inv_;  // permuted position of original index
    SpMat lower_;                  // CSC, dim x dim
    double logdet_ = 0.0;
};

/// Throws NotPositiveDefinite(pivot) when a pivot <= pivot_rel_tol * max diagonal.
CholeskyFactor cholesky(const SparseSymMatrix& a, double pivot_rel_tol = 1e-12);

/// Factorization handle that reuses the fill-reducing ordering and symbolic
/// analysis across repeated factorizations of matrices with one sparsity
/// pattern (the hyperparameter-optimization hot path).
class RepeatedCholesky {
public:
    RepeatedCholesky();
    ~RepeatedCholesky();
    RepeatedCholesky(RepeatedCholesky&&) noexcept;
    RepeatedCholesky& operator=(RepeatedCholesky&&) noexcept;

    void factorize(const SparseSymMatrix& a, double pivot_rel_tol = 1e-12);
    double logdet() const;
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

Eigen::VectorXd solve(const CholeskyFactor& f, const Eigen::VectorXd& b);

/// Entries of A^{-1} on the sparsity pattern of L + L^T (Takahashi equations),
/// indexed in the ORIGINAL ordering. Diagonal is complete and exact.
class SelectedInverse {
public:
    Index dim() const { return static_cast<Index>(diag_.size()); }
    const Eigen::VectorXd& diagonal() const { return diag_; }
    /// Entry (i, j) of A^{-1} if it lies on the computed pattern.
    /// `found` reports pattern membership.
    double entry(Index i, Index j, bool* found = nullptr) const;

private:
    friend SelectedInverse selected_inverse(const CholeskyFactor& f);
    Eigen::VectorXd diag_;
    SpMat lower_;                  // pattern of L, values of A^{-1}, permuted order
    std::vector<Index> perm_inv_;
};

SelectedInverse selected_inverse(const CholeskyFactor& f);

/// MatrixMarket coordinate text dump ("%%MatrixMarket matrix coordinate real symmetric").
void write_matrix_market(const SparseSymMatrix& a, std::ostream& os);

}  // namespace stfuse::sparse
