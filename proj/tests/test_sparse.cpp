#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <cmath>
#include <random>
#include <sstream>

#include "stfuse/mesh.hpp"
#include "stfuse/sparse.hpp"
#include "stfuse/spde.hpp"
#include "stfuse/temporal.hpp"

using namespace stfuse;
using sparse::Entry;
using sparse::SparseSymMatrix;

namespace {

Eigen::MatrixXd dense_of(const SparseSymMatrix& a) {
    return Eigen::MatrixXd(a.full());
}

SparseSymMatrix random_spd(int n, unsigned seed, int band = 0) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd b(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            b(i, j) = (band == 0 || std::abs(i - j) <= band) ? nd(rng) : 0.0;
    Eigen::MatrixXd a = b * b.transpose() + Eigen::MatrixXd::Identity(n, n);
    std::vector<Entry> e;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) e.push_back({i, j, a(i, j)});
    return SparseSymMatrix::from_triplets(n, e);
}

// permuted reconstruction residual ||P A P^T - L L^T||_F / ||A||_F
double reconstruction_residual(const SparseSymMatrix& a, const sparse::CholeskyFactor& f) {
    const auto n = a.dim();
    Eigen::MatrixXd ad = dense_of(a);
    Eigen::MatrixXd aperm(n, n);
    std::vector<sparse::Index> pinv(static_cast<std::size_t>(n));
    for (sparse::Index k = 0; k < n; ++k)
        pinv[static_cast<std::size_t>(f.permutation()[static_cast<std::size_t>(k)])] = k;
    for (sparse::Index i = 0; i < n; ++i)
        for (sparse::Index j = 0; j < n; ++j)
            aperm(pinv[static_cast<std::size_t>(i)], pinv[static_cast<std::size_t>(j)]) = ad(i, j);
    Eigen::MatrixXd l = Eigen::MatrixXd(f.lower_factor());
    return (aperm - l * l.transpose()).norm() / ad.norm();
}

}  // namespace

TEST_CASE("cholesky: identity") {
    auto a = SparseSymMatrix::identity(5);
    auto f = sparse::cholesky(a);
    CHECK(f.logdet() == doctest::Approx(0.0).epsilon(1e-15));
    Eigen::MatrixXd l = Eigen::MatrixXd(f.lower_factor());
    CHECK((l - Eigen::MatrixXd::Identity(5, 5)).norm() == doctest::Approx(0.0));
}

TEST_CASE("cholesky: 2x2 hand case") {
    std::vector<Entry> e{{0, 0, 4.0}, {1, 0, 2.0}, {1, 1, 3.0}};
    auto a = SparseSymMatrix::from_triplets(2, e);
    auto f = sparse::cholesky(a);
    CHECK(f.logdet() == doctest::Approx(std::log(8.0)).epsilon(1e-14));
    CHECK(reconstruction_residual(a, f) < 1e-14);
    if (f.permutation()[0] == 0 && f.permutation()[1] == 1) {
        Eigen::MatrixXd l = Eigen::MatrixXd(f.lower_factor());
        CHECK(l(0, 0) == doctest::Approx(2.0));
        CHECK(l(1, 0) == doctest::Approx(1.0));
        CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)));
    }
}

TEST_CASE("cholesky: random SPD 50x50 reconstruction") {
    auto a = random_spd(50, 1234);
    auto f = sparse::cholesky(a);
    CHECK(reconstruction_residual(a, f) < 1e-10);
    // logdet is twice the log-diagonal sum of the lower factor
    double twice_ldiag = 0.0;
    Eigen::MatrixXd l(f.lower_factor());
    for (int i = 0; i < 50; ++i) twice_ldiag += 2.0 * std::log(l(i, i));
    CHECK(f.logdet() == doctest::Approx(twice_ldiag).epsilon(1e-12));
}

TEST_CASE("cholesky: not positive definite") {
    std::vector<Entry> e{{0, 0, 1.0}, {1, 0, 2.0}, {1, 1, 1.0}};
    auto a = SparseSymMatrix::from_triplets(2, e);
    CHECK_THROWS_AS(sparse::cholesky(a), NotPositiveDefinite);
    try {
        sparse::cholesky(a);
    } catch (const NotPositiveDefinite& err) {
        CHECK(err.pivot_index >= 0);
        CHECK(err.pivot_index < 2);
    }
}

TEST_CASE("solve: identity and hand case") {
    auto id = SparseSymMatrix::identity(3);
    auto fid = sparse::cholesky(id);
    Eigen::VectorXd b(3);
    b << 1.5, -2.0, 7.0;
    CHECK((sparse::solve(fid, b) - b).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));

    std::vector<Entry> e{{0, 0, 4.0}, {1, 0, 2.0}, {1, 1, 3.0}};
    auto a = SparseSymMatrix::from_triplets(2, e);
    auto f = sparse::cholesky(a);
    Eigen::VectorXd b2(2);
    b2 << 8.0, 7.0;
    Eigen::VectorXd x = sparse::solve(f, b2);
    CHECK(x[0] == doctest::Approx(1.25).epsilon(1e-14));
    CHECK(x[1] == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("solve: random SPD 100x100 vs dense oracle") {
    auto a = random_spd(100, 77);
    auto f = sparse::cholesky(a);
    Eigen::MatrixXd ad = dense_of(a);
    std::mt19937 rng(5);
    std::normal_distribution<double> nd;
    Eigen::VectorXd b(100);
    for (int i = 0; i < 100; ++i) b[i] = nd(rng);
    Eigen::VectorXd x = sparse::solve(f, b);
    Eigen::VectorXd x0 = ad.ldlt().solve(b);
    CHECK((x - x0).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((ad * x - b).lpNorm<Eigen::Infinity>() / b.lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("solve roundtrip property: 100 trials") {
    std::mt19937 rng(99);
    std::normal_distribution<double> nd;
    auto a = random_spd(40, 4242, 6);
    auto f = sparse::cholesky(a);
    Eigen::MatrixXd ad = dense_of(a);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd x0(40);
        for (int i = 0; i < 40; ++i) x0[i] = nd(rng);
        Eigen::VectorXd b = ad * x0;
        CHECK((sparse::solve(f, b) - x0).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("logdet vs dense eigenvalues up to 200x200") {
    for (int n : {20, 100, 200}) {
        auto a = random_spd(n, 1000u + static_cast<unsigned>(n), 8);
        auto f = sparse::cholesky(a);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_of(a));
        double ld = 0.0;
        for (int i = 0; i < n; ++i) ld += std::log(es.eigenvalues()[i]);
        CHECK(std::abs(f.logdet() - ld) / std::abs(ld) < 1e-8);
    }
}

TEST_CASE("kronecker: identity block structure and dims") {
    auto b = random_spd(4, 3);
    auto k = sparse::kronecker(SparseSymMatrix::identity(2), b);
    CHECK(k.dim() == 8);
    Eigen::MatrixXd kd = dense_of(k);
    Eigen::MatrixXd bd = dense_of(b);
    CHECK((kd.block(0, 0, 4, 4) - bd).norm() == doctest::Approx(0.0));
    CHECK((kd.block(4, 4, 4, 4) - bd).norm() == doctest::Approx(0.0));
    CHECK(kd.block(0, 4, 4, 4).norm() == doctest::Approx(0.0));

    auto a3 = random_spd(3, 8);
    auto b7 = random_spd(7, 9);
    CHECK(sparse::kronecker(a3, b7).dim() == 21);
}

TEST_CASE("kronecker: AR1 x SPDE matches dense oracle exactly") {
    temporal::TemporalModel tm{temporal::Kind::AR1, 3, 1.0, 0.5};
    auto qt = temporal::temporal_precision(tm);

    std::vector<mesh::Point> pts{{0, 0}, {10, 0}, {10, 10}, {0, 10}, {5, 5}, {2, 7}};
    std::vector<mesh::Point> dom{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    auto m = mesh::build_mesh(pts, dom, 4.0, 6.0, 3.0);
    auto fem = spde::fem_matrices(m);
    auto qs = spde::precision(fem, spde::SpdeParams::from_range_sd(5.0, 1.0, 2.0));

    auto k = sparse::kronecker(qt, qs);
    Eigen::MatrixXd oracle = Eigen::kroneckerProduct(dense_of(qt), dense_of(qs)).eval();
    CHECK((dense_of(k) - oracle).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("kronecker bilinearity is exact") {
    auto a = random_spd(5, 21);
    auto b = random_spd(6, 22);
    auto c = random_spd(6, 23);
    auto lhs = sparse::kronecker(a, SparseSymMatrix::add(b, c));
    auto rhs = SparseSymMatrix::add(sparse::kronecker(a, b), sparse::kronecker(a, c));
    CHECK((dense_of(lhs) - dense_of(rhs)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("kronecker overflow guard") {
    auto a = random_spd(10, 31);
    auto b = random_spd(10, 32);
    CHECK_THROWS_AS(sparse::kronecker(a, b, 50), NumericalError);
}

TEST_CASE("selected_inverse: diagonal matrix") {
    std::vector<double> d{2.0, 5.0, 0.25, 10.0};
    auto a = SparseSymMatrix::diagonal(d);
    auto si = sparse::selected_inverse(sparse::cholesky(a));
    for (int i = 0; i < 4; ++i)
        CHECK(si.diagonal()[i] == doctest::Approx(1.0 / d[static_cast<std::size_t>(i)]).epsilon(1e-14));
}

TEST_CASE("selected_inverse: AR1 tridiagonal precision vs dense inverse") {
    temporal::TemporalModel tm{temporal::Kind::AR1, 5, 1.0, 0.8};
    auto q = temporal::temporal_precision(tm);
    auto si = sparse::selected_inverse(sparse::cholesky(q));
    Eigen::MatrixXd qinv = dense_of(q).inverse();
    for (int i = 0; i < 5; ++i)
        CHECK(std::abs(si.diagonal()[i] - qinv(i, i)) < 1e-10);
    // pattern entries agree too
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            bool found = false;
            const double v = si.entry(i, j, &found);
            if (found) CHECK(std::abs(v - qinv(i, j)) < 1e-10);
        }
}

TEST_CASE("selected_inverse: SPDE precision on ~50-vertex mesh vs dense inverse") {
    std::vector<mesh::Point> pts;
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    for (int i = 0; i < 12; ++i) pts.push_back({u(rng), u(rng)});
    std::vector<mesh::Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto m = mesh::build_mesh(pts, dom, 5.0, 8.0, 4.0);
    auto fem = spde::fem_matrices(m);
    auto q = spde::precision(fem, spde::SpdeParams::from_range_sd(8.0, 1.0, 2.0));
    auto si = sparse::selected_inverse(sparse::cholesky(q));
    Eigen::MatrixXd qinv = dense_of(q).inverse();
    for (int i = 0; i < q.dim(); ++i)
        CHECK(std::abs(si.diagonal()[i] - qinv(i, i)) < 1e-8);
}

TEST_CASE("selected_inverse diagonal is nonnegative") {
    for (unsigned seed : {1u, 2u, 3u, 4u}) {
        auto a = random_spd(30, seed, 5);
        auto si = sparse::selected_inverse(sparse::cholesky(a));
        CHECK(si.diagonal().minCoeff() >= 0.0);
    }
}

TEST_CASE("repeated cholesky: symbolic reuse matches fresh factorizations") {
    sparse::RepeatedCholesky rc;
    std::mt19937 rng(66);
    std::normal_distribution<double> nd;
    auto base = random_spd(60, 91, 7);
    for (int round = 0; round < 4; ++round) {
        // same pattern, new values
        std::vector<Entry> e = base.entries();
        for (auto& x : e)
            if (x.row == x.col) x.value += 0.5 * round + 0.1 * std::abs(nd(rng));
        auto a = SparseSymMatrix::from_triplets(60, e);
        rc.factorize(a);
        auto fresh = sparse::cholesky(a);
        CHECK(rc.logdet() == doctest::Approx(fresh.logdet()).epsilon(1e-12));
        Eigen::VectorXd b(60);
        for (int i = 0; i < 60; ++i) b[i] = nd(rng);
        CHECK((rc.solve(b) - fresh.solve(b)).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    // a pattern change must be picked up, not silently mis-factorized
    auto other = random_spd(60, 17, 3);
    rc.factorize(other);
    auto fresh = sparse::cholesky(other);
    CHECK(rc.logdet() == doctest::Approx(fresh.logdet()).epsilon(1e-12));
}

TEST_CASE("matrix market dump") {
    std::vector<Entry> e{{0, 0, 4.0}, {1, 0, 2.0}, {1, 1, 3.0}};
    auto a = SparseSymMatrix::from_triplets(2, e);
    std::ostringstream os;
    sparse::write_matrix_market(a, os);
    const std::string s = os.str();
    CHECK(s.rfind("%%MatrixMarket matrix coordinate real symmetric\n", 0) == 0);
    CHECK(s.find("2 2 3") != std::string::npos);
    CHECK(s.find("2 1 2") != std::string::npos);  // 1-based lower-triangle entry
}

TEST_CASE("from_triplets rejects bad input") {
    std::vector<Entry> e{{0, 0, 1.0}};
    CHECK_THROWS_AS(SparseSymMatrix::from_triplets(0, e), DimensionMismatch);
    std::vector<Entry> e2{{5, 0, 1.0}};
    CHECK_THROWS_AS(SparseSymMatrix::from_triplets(2, e2), DimensionMismatch);
}
