#include "stfuse/spde.hpp"

#include <cmath>
#include <numbers>

namespace stfuse::spde {

namespace {
constexpr double kPi = std::numbers::pi;
}

SpdeParams SpdeParams::from_range_sd(double range, double sd, double alpha) {
    if (range <= 0 || sd <= 0)
        throw UsageError("SpdeParams: range and sd must be > 0");
    if (alpha != 2.0 && alpha != 1.5)
        throw UsageError("SpdeParams: (range, sd) parameterization defined for alpha in {3/2, 2}");
    SpdeParams p;
    p.range = range;
    p.sd = sd;
    p.alpha = alpha;
    const double nu = alpha - 1.0;
    p.kappa = std::sqrt(8.0 * nu) / range;
    // sigma^2 = Gamma(nu) / (Gamma(alpha) 4 pi kappa^(2 nu) tau^2)
    const double c = std::tgamma(nu) /
                     (std::tgamma(alpha) * 4.0 * kPi * std::pow(p.kappa, 2.0 * nu));
    p.tau = std::sqrt(c) / sd;
    return p;
}

SpdeParams SpdeParams::from_kappa_tau(double kappa, double tau, double alpha) {
    if (kappa <= 0 || tau <= 0)
        throw UsageError("SpdeParams: kappa and tau must be > 0");
    SpdeParams p;
    p.alpha = alpha;
    p.kappa = kappa;
    p.tau = tau;
    const double nu = alpha - 1.0;
    if (nu > 0) {
        p.range = std::sqrt(8.0 * nu) / kappa;
        const double c = std::tgamma(nu) /
                         (std::tgamma(alpha) * 4.0 * kPi * std::pow(kappa, 2.0 * nu));
        p.sd = std::sqrt(c) / tau;
    }
    return p;
}

FemMatrices fem_matrices(const mesh::Mesh& m) {
    const auto n = m.n_vertices();
    std::vector<sparse::Entry> ce, ge;
    ce.reserve(static_cast<std::size_t>(n));
    ge.reserve(m.triangles().size() * 6);
    std::vector<double> cdiag(static_cast<std::size_t>(n), 0.0);

    for (std::size_t t = 0; t < m.triangles().size(); ++t) {
        const auto& tr = m.triangles()[t];
        const sparse::Index v[3] = {tr.a, tr.b, tr.c};
        const mesh::Point p[3] = {m.vertices()[static_cast<std::size_t>(tr.a)],
                                  m.vertices()[static_cast<std::size_t>(tr.b)],
                                  m.vertices()[static_cast<std::size_t>(tr.c)]};
        const double area = m.triangle_area(static_cast<sparse::Index>(t));
        for (int k = 0; k < 3; ++k) cdiag[static_cast<std::size_t>(v[k])] += area / 3.0;

        // gradients of the barycentric basis: grad phi_k = (b_k, c_k) / (2 area)
        double b[3], c[3];
        for (int k = 0; k < 3; ++k) {
            const int i = (k + 1) % 3, j = (k + 2) % 3;
            b[k] = p[i].y - p[j].y;
            c[k] = p[j].x - p[i].x;
        }
        for (int k = 0; k < 3; ++k)
            for (int l = 0; l <= k; ++l)
                ge.push_back({v[k], v[l], (b[k] * b[l] + c[k] * c[l]) / (4.0 * area)});
    }
    for (sparse::Index i = 0; i < n; ++i)
        ce.push_back({i, i, cdiag[static_cast<std::size_t>(i)]});

    return {sparse::SparseSymMatrix::from_triplets(n, ce),
            sparse::SparseSymMatrix::from_triplets(n, ge)};
}

sparse::SparseSymMatrix precision(const FemMatrices& fem, const SpdeParams& params) {
    if (params.alpha != 1.0 && params.alpha != 2.0)
        throw UsageError("UnsupportedAlpha: precision requires alpha in {1, 2}");
    const double k2 = params.kappa * params.kappa;
    const double t2 = params.tau * params.tau;
    if (params.alpha == 1.0) {
        return sparse::SparseSymMatrix::add(fem.c.scaled(t2 * k2), fem.g.scaled(t2));
    }
    // alpha = 2: tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G); C diagonal (lumped)
    const auto n = fem.c.dim();
    std::vector<double> cinv(static_cast<std::size_t>(n), 0.0);
    for (const auto& e : fem.c.entries())
        if (e.row == e.col) cinv[static_cast<std::size_t>(e.row)] = 1.0 / e.value;

    const sparse::SpMat gfull = fem.g.full();
    Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(cinv.data(), n);
    sparse::SpMat gcg = gfull * d.asDiagonal() * gfull;

    std::vector<sparse::Entry> entries;
    entries.reserve(static_cast<std::size_t>(gcg.nonZeros()) / 2 + fem.g.entries().size() + static_cast<std::size_t>(n));
    for (int col = 0; col < gcg.outerSize(); ++col)
        for (sparse::SpMat::InnerIterator it(gcg, col); it; ++it)
            if (it.row() >= it.col())
                entries.push_back({it.row(), it.col(), t2 * it.value()});
    for (const auto& e : fem.g.entries())
        entries.push_back({e.row, e.col, t2 * 2.0 * k2 * e.value});
    for (const auto& e : fem.c.entries())
        entries.push_back({e.row, e.col, t2 * k2 * k2 * e.value});
    return sparse::SparseSymMatrix::from_triplets(n, entries);
}

double matern_cov(double h, const SpdeParams& params) {
    if (h < 0) throw UsageError("matern_cov: h must be >= 0");
    const double nu = params.nu();
    const double s2 = params.sd * params.sd;
    if (h == 0.0) return s2;
    if (nu <= 0) throw UsageError("matern_cov: needs nu > 0");
    const double kh = params.kappa * h;
    if (nu == 0.5) return s2 * std::exp(-kh);  // exponential special case
    return s2 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(kh, nu) *
           std::cyl_bessel_k(nu, kh);
}

double pc_lambda_range(const PcPrior& prior) {
    // d = 2: P(rho <= r) = exp(-lambda / r)
    if (prior.rho_tail == Tail::Greater)
        return -prior.rho0 * std::log1p(-prior.p_rho);  // 1 - exp(-l/r0) = p
    return -prior.rho0 * std::log(prior.p_rho);         // exp(-l/r0) = p
}

double pc_lambda_sigma(const PcPrior& prior) {
    // P(sigma > s) = exp(-lambda s)
    if (prior.sigma_tail == Tail::Greater)
        return -std::log(prior.p_sigma) / prior.sigma0;
    return -std::log1p(-prior.p_sigma) / prior.sigma0;
}

double pc_prior_logdensity(const SpdeParams& params, const PcPrior& prior) {
    const double d = 2.0;
    const double lr = pc_lambda_range(prior);
    const double ls = pc_lambda_sigma(prior);
    const double rho = params.range;
    const double sigma = params.sd;
    const double lp_rho = std::log(d / 2.0) + std::log(lr) +
                          (-d / 2.0 - 1.0) * std::log(rho) - lr * std::pow(rho, -d / 2.0);
    const double lp_sigma = std::log(ls) - ls * sigma;
    return lp_rho + lp_sigma;
}

}  // namespace stfuse::spde
