#include "stfuse/sparse.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <ostream>

namespace stfuse::sparse {

namespace {

SpMat lower_csc(Index dim, const std::vector<Entry>& entries) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(entries.size());
    for (const auto& e : entries) {
        t.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col), e.value);
    }
    SpMat m(static_cast<int>(dim), static_cast<int>(dim));
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
}

}  // namespace

SparseSymMatrix::SparseSymMatrix(Index dim, std::vector<Entry> entries)
    : dim_(dim), entries_(std::move(entries)) {
    lower_ = lower_csc(dim_, entries_);
}

SparseSymMatrix SparseSymMatrix::from_triplets(Index dim, std::span<const Entry> entries) {
    if (dim < 1) throw DimensionMismatch("SparseSymMatrix: dim must be >= 1");
    std::vector<Entry> work(entries.begin(), entries.end());
    for (auto& e : work) {
        if (e.row < 0 || e.col < 0 || e.row >= dim || e.col >= dim)
            throw DimensionMismatch("SparseSymMatrix: entry out of range");
        if (e.row < e.col) std::swap(e.row, e.col);
    }
    std::sort(work.begin(), work.end(), [](const Entry& a, const Entry& b) {
        return a.col < b.col || (a.col == b.col && a.row < b.row);
    });
    std::vector<Entry> out;
    out.reserve(work.size());
    for (const auto& e : work) {
        if (!out.empty() && out.back().row == e.row && out.back().col == e.col)
            out.back().value += e.value;
        else
            out.push_back(e);
    }
    std::erase_if(out, [](const Entry& e) { return e.value == 0.0; });
    return SparseSymMatrix(dim, std::move(out));
}

SparseSymMatrix SparseSymMatrix::identity(Index dim) {
    std::vector<Entry> e;
    e.reserve(static_cast<std::size_t>(dim));
    for (Index i = 0; i < dim; ++i) e.push_back({i, i, 1.0});
    return from_triplets(dim, e);
}

SparseSymMatrix SparseSymMatrix::diagonal(std::span<const double> d) {
    std::vector<Entry> e;
    e.reserve(d.size());
    for (Index i = 0; i < static_cast<Index>(d.size()); ++i)
        e.push_back({i, i, d[static_cast<std::size_t>(i)]});
    return from_triplets(static_cast<Index>(d.size()), e);
}

SpMat SparseSymMatrix::full() const {
    SpMat f = lower_.selfadjointView<Eigen::Lower>();
    f.makeCompressed();
    return f;
}

double SparseSymMatrix::max_diagonal() const {
    double m = 0.0;
    for (const auto& e : entries_)
        if (e.row == e.col) m = std::max(m, std::abs(e.value));
    return m;
}

SparseSymMatrix SparseSymMatrix::scaled(double c) const {
    std::vector<Entry> e = entries_;
    for (auto& x : e) x.value *= c;
    return from_triplets(dim_, e);
}

SparseSymMatrix SparseSymMatrix::add(const SparseSymMatrix& a, const SparseSymMatrix& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("add: dimension mismatch");
    std::vector<Entry> e = a.entries_;
    e.insert(e.end(), b.entries_.begin(), b.entries_.end());
    return from_triplets(a.dim(), e);
}

SparseSymMatrix SparseSymMatrix::block_diag(std::span<const SparseSymMatrix> blocks) {
    Index dim = 0;
    std::size_t nnz = 0;
    for (const auto& b : blocks) {
        dim += b.dim();
        nnz += b.entries().size();
    }
    std::vector<Entry> e;
    e.reserve(nnz);
    Index off = 0;
    for (const auto& b : blocks) {
        for (const auto& x : b.entries()) e.push_back({x.row + off, x.col + off, x.value});
        off += b.dim();
    }
    return from_triplets(dim, e);
}

SparseSymMatrix kronecker(const SparseSymMatrix& a, const SparseSymMatrix& b, Index max_dim) {
    const Index na = a.dim(), nb = b.dim();
    if (na > max_dim / nb)
        throw NumericalError("kronecker: result dimension exceeds configured maximum");
    std::vector<Entry> out;
    out.reserve(a.entries().size() * b.entries().size() * 2);
    for (const auto& ea : a.entries()) {
        const Index i = ea.row, j = ea.col;
        for (const auto& eb : b.entries()) {
            const Index k = eb.row, l = eb.col;
            const double v = ea.value * eb.value;
            if (i == j) {
                // diagonal block of A: B's lower triangle maps straight in
                out.push_back({i * nb + k, j * nb + l, v});
            } else {
                // strictly lower block (i > j): need the full B, so mirror k<l
                out.push_back({i * nb + k, j * nb + l, v});
                if (k != l) out.push_back({i * nb + l, j * nb + k, v});
            }
        }
    }
    return SparseSymMatrix::from_triplets(na * nb, out);
}

CholeskyFactor cholesky(const SparseSymMatrix& a, double pivot_rel_tol) {
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    ldlt.compute(a.lower());

    const Index n = a.dim();
    const double tol = pivot_rel_tol * a.max_diagonal();
    const Eigen::VectorXd d = ldlt.vectorD();
    double logdet = 0.0;
    for (Index k = 0; k < n; ++k) {
        const double dk = d[k];
        if (!(dk > tol) || !std::isfinite(dk)) throw NotPositiveDefinite(k);
        logdet += std::log(dk);
    }

    CholeskyFactor f;
    f.perm_.resize(static_cast<std::size_t>(n));
    f.perm_inv_.resize(static_cast<std::size_t>(n));
    // Eigen's permutationP maps original -> permuted: (P x)[p(i)] = x[i].
    const auto& P = ldlt.permutationP();
    for (Index i = 0; i < n; ++i) {
        const Index pi = P.indices()[static_cast<int>(i)];
        f.perm_inv_[static_cast<std::size_t>(i)] = pi;
        f.perm_[static_cast<std::size_t>(pi)] = i;
    }

    // Fold sqrt(D) into the unit-lower factor: P A P^T = (L sqrt(D)) (L sqrt(D))^T.
    SpMat L = ldlt.matrixL();
    const Eigen::VectorXd s = d.cwiseSqrt();
    for (int col = 0; col < L.outerSize(); ++col)
        for (SpMat::InnerIterator it(L, col); it; ++it) it.valueRef() *= s[col];
    L.makeCompressed();
    f.lower_ = std::move(L);
    f.logdet_ = logdet;
    return f;
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
    const Index n = dim();
    if (b.size() != n) throw DimensionMismatch("solve: rhs length mismatch");
    Eigen::VectorXd pb(n);
    for (Index i = 0; i < n; ++i) pb[perm_inv_[static_cast<std::size_t>(i)]] = b[i];
    lower_.triangularView<Eigen::Lower>().solveInPlace(pb);
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(pb);
    Eigen::VectorXd x(n);
    for (Index i = 0; i < n; ++i) x[i] = pb[perm_inv_[static_cast<std::size_t>(i)]];
    return x;
}

Eigen::MatrixXd CholeskyFactor::solve(const Eigen::MatrixXd& b) const {
    const Index n = dim();
    if (b.rows() != n) throw DimensionMismatch("solve: rhs rows mismatch");
    Eigen::MatrixXd pb(n, b.cols());
    for (Index i = 0; i < n; ++i)
        pb.row(perm_inv_[static_cast<std::size_t>(i)]) = b.row(i);
    lower_.triangularView<Eigen::Lower>().solveInPlace(pb);
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(pb);
    Eigen::MatrixXd x(n, b.cols());
    for (Index i = 0; i < n; ++i)
        x.row(i) = pb.row(perm_inv_[static_cast<std::size_t>(i)]);
    return x;
}

Eigen::VectorXd CholeskyFactor::half_solve(const Eigen::VectorXd& z) const {
    const Index n = dim();
    if (z.size() != n) throw DimensionMismatch("half_solve: rhs length mismatch");
    Eigen::VectorXd w = z;
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(w);
    Eigen::VectorXd x(n);
    for (Index i = 0; i < n; ++i) x[i] = w[perm_inv_[static_cast<std::size_t>(i)]];
    return x;
}

Eigen::VectorXd solve(const CholeskyFactor& f, const Eigen::VectorXd& b) {
    return f.solve(b);
}

struct RepeatedCholesky::Impl {
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    bool analyzed = false;
    std::vector<int> pattern;  // outer then inner indices of the analyzed matrix
    double logdet = 0.0;
};

RepeatedCholesky::RepeatedCholesky() : impl_(std::make_unique<Impl>()) {}
RepeatedCholesky::~RepeatedCholesky() = default;
RepeatedCholesky::RepeatedCholesky(RepeatedCholesky&&) noexcept = default;
RepeatedCholesky& RepeatedCholesky::operator=(RepeatedCholesky&&) noexcept = default;

void RepeatedCholesky::factorize(const SparseSymMatrix& a, double pivot_rel_tol) {
    const SpMat& m = a.lower();
    std::vector<int> pattern;
    pattern.reserve(static_cast<std::size_t>(m.outerSize() + 1 + m.nonZeros()));
    pattern.insert(pattern.end(), m.outerIndexPtr(), m.outerIndexPtr() + m.outerSize() + 1);
    pattern.insert(pattern.end(), m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());
    if (!impl_->analyzed || pattern != impl_->pattern) {
        impl_->ldlt.analyzePattern(m);
        impl_->pattern = std::move(pattern);
        impl_->analyzed = true;
    }
    impl_->ldlt.factorize(m);
    const Index n = a.dim();
    const double tol = pivot_rel_tol * a.max_diagonal();
    const Eigen::VectorXd d = impl_->ldlt.vectorD();
    double logdet = 0.0;
    for (Index k = 0; k < n; ++k) {
        const double dk = d[k];
        if (!(dk > tol) || !std::isfinite(dk)) throw NotPositiveDefinite(k);
        logdet += std::log(dk);
    }
    impl_->logdet = logdet;
}

double RepeatedCholesky::logdet() const { return impl_->logdet; }

Eigen::VectorXd RepeatedCholesky::solve(const Eigen::VectorXd& b) const {
    return impl_->ldlt.solve(b);
}

SelectedInverse selected_inverse(const CholeskyFactor& f) {
    // Takahashi equations on the pattern of L, right-to-left:
    //   Z_ij = delta_ij / d_j - sum_{k > j, L_kj != 0} L_kj Z_ik,  i >= j,
    // with L unit-lower and d the LDLT pivots. The factor here carries
    // sqrt(d) folded in, so L_kj(unit) = lower(k,j)/lower(j,j) and
    // d_j = lower(j,j)^2. The pattern is closed under the recurrence.
    const SpMat& L = f.lower_factor();
    const Index n = f.dim();

    SpMat Z = L;  // same pattern, values overwritten
    Eigen::VectorXd diag_perm(n);

    const int* outer = L.outerIndexPtr();
    const int* inner = L.innerIndexPtr();
    const double* lval = L.valuePtr();
    double* zval = Z.valuePtr();

    // entry lookup in column c of Z at row r (binary search, pattern sorted)
    auto z_at = [&](Index r, Index c) -> double {
        const int lo = outer[c], hi = outer[c + 1];
        const int* first = inner + lo;
        const int* last = inner + hi;
        const int* it = std::lower_bound(first, last, static_cast<int>(r));
        if (it != last && *it == static_cast<int>(r)) return zval[lo + (it - first)];
        return 0.0;
    };

    for (Index j = n - 1; j >= 0; --j) {
        const int lo = outer[j], hi = outer[j + 1];
        const double ljj = lval[lo];  // diagonal first within a CSC column
        const double dj = ljj * ljj;
        // rows below the diagonal, bottom-up so later entries are ready
        for (int p = hi - 1; p > lo; --p) {
            const Index i = inner[p];
            double s = 0.0;
            for (int q = lo + 1; q < hi; ++q) {
                const Index k = inner[q];
                const double lkj = lval[q] / ljj;
                s += lkj * (k <= i ? z_at(i, k) : z_at(k, i));
            }
            zval[p] = -s;
        }
        double sd = 0.0;
        for (int q = lo + 1; q < hi; ++q) sd += (lval[q] / ljj) * zval[q];
        zval[lo] = 1.0 / dj - sd;
        diag_perm[j] = zval[lo];
    }

    SelectedInverse si;
    si.lower_ = std::move(Z);
    si.perm_inv_.assign(f.permutation().size(), 0);
    const auto& perm = f.permutation();
    for (Index k = 0; k < n; ++k) si.perm_inv_[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k;
    si.diag_.resize(n);
    for (Index i = 0; i < n; ++i) si.diag_[i] = diag_perm[si.perm_inv_[static_cast<std::size_t>(i)]];
    return si;
}

double SelectedInverse::entry(Index i, Index j, bool* found) const {
    Index pi = perm_inv_[static_cast<std::size_t>(i)];
    Index pj = perm_inv_[static_cast<std::size_t>(j)];
    if (pi < pj) std::swap(pi, pj);
    const int* outer = lower_.outerIndexPtr();
    const int* inner = lower_.innerIndexPtr();
    const double* val = lower_.valuePtr();
    const int lo = outer[pj], hi = outer[pj + 1];
    const int* it = std::lower_bound(inner + lo, inner + hi, static_cast<int>(pi));
    if (it != inner + hi && *it == static_cast<int>(pi)) {
        if (found) *found = true;
        return val[lo + (it - (inner + lo))];
    }
    if (found) *found = false;
    return 0.0;
}

void write_matrix_market(const SparseSymMatrix& a, std::ostream& os) {
    os << "%%MatrixMarket matrix coordinate real symmetric\n";
    os << a.dim() << " " << a.dim() << " " << a.entries().size() << "\n";
    char buf[96];
    for (const auto& e : a.entries()) {
        std::snprintf(buf, sizeof(buf), "%lld %lld %.17g\n",
                      static_cast<long long>(e.row + 1),
                      static_cast<long long>(e.col + 1), e.value);
        os << buf;
    }
}

}  // namespace stfuse::sparse
