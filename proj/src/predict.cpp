#include "stfuse/predict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "optimize.hpp"
#include "stfuse/gmix.hpp"
namespace stfuse::predict {

namespace {

using model::Index;

/// Rebuilds the posterior precision factor for one grid point of the fit.
sparse::CholeskyFactor posterior_factor(const model::PosteriorFit& fit,
                                        const model::ThetaGridPoint& gp) {
    const model::Hyperparams th = fit.theta_at(gp.internal);
    model::Dataset data_std = fit.data;
    data_std.obs_covariates = fit.standardization.apply(fit.data.obs_covariates);
    auto am = model::assemble(fit.spec, data_std, *fit.msh, th);
    sparse::SpMat ztz = (sparse::SpMat(am.z.transpose()) * am.z).pruned();
    std::vector<sparse::Entry> entries(am.qx.entries());
    for (int col = 0; col < ztz.outerSize(); ++col)
        for (sparse::SpMat::InnerIterator it(ztz, col); it; ++it)
            if (it.row() >= it.col())
                entries.push_back({it.row(), it.col(), it.value() / gp.nugget_var});
    auto qpost = sparse::SparseSymMatrix::from_triplets(am.qx.dim(), entries);
    return sparse::cholesky(qpost);
}

void check_covariates_present(const model::PosteriorFit& fit,
                              const std::vector<std::string>& cov_names) {
    auto needs = [&](const std::string& name) {
        if (name == "intercept") return;
        if (std::find(cov_names.begin(), cov_names.end(), name) == cov_names.end())
            throw DataError("MissingCovariate: " + name);
    };
    for (const auto& n : fit.spec.fixed_effects) needs(n);
    for (const auto& t : fit.spec.svc_terms) needs(t.covariate);
    for (const auto& t : fit.spec.tvc_terms) needs(t.covariate);
}

Eigen::MatrixXd standardize_for(const model::PosteriorFit& fit,
                                const std::vector<std::string>& cov_names,
                                const Eigen::MatrixXd& raw) {
    Eigen::MatrixXd out = raw;
    for (std::size_t j = 0; j < cov_names.size(); ++j) {
        for (std::size_t k = 0; k < fit.standardization.names.size(); ++k) {
            if (fit.standardization.names[k] == cov_names[j]) {
                out.col(static_cast<Index>(j)) =
                    (out.col(static_cast<Index>(j)).array() -
                     fit.standardization.mean[static_cast<Index>(k)]) /
                    fit.standardization.sd[static_cast<Index>(k)];
                break;
            }
        }
    }
    return out;
}

}  // namespace

Predictor::Predictor(const model::PosteriorFit& fit, int threads)
    : fit_(&fit), threads_(threads) {
    factors_.resize(fit.grid.size());
    detail::parallel_for(static_cast<int>(fit.grid.size()), threads, [&](int g) {
        factors_[static_cast<std::size_t>(g)] =
            posterior_factor(fit, fit.grid[static_cast<std::size_t>(g)]);
    });
}

std::vector<PointPrediction> Predictor::at(std::span<const model::DesignRequest> pts,
                                           const std::vector<std::string>& cov_names,
                                           const Eigen::MatrixXd& cov,
                                           double threshold) const {
    const auto& fit = *fit_;
    check_covariates_present(fit, cov_names);
    for (Index i = 0; i < cov.rows(); ++i)
        for (Index j = 0; j < cov.cols(); ++j)
            if (!std::isfinite(cov(i, j)))
                throw DataError("MissingCovariate: row " + std::to_string(i) + " month " +
                                std::to_string(pts[static_cast<std::size_t>(i)].t) +
                                " name " + cov_names[static_cast<std::size_t>(j)]);

    const Eigen::MatrixXd cov_std = standardize_for(fit, cov_names, cov);
    auto rows = model::design_rows(fit.spec, pts, cov_names, cov_std, *fit.msh, fit.layout);

    const int ng = static_cast<int>(fit.grid.size());
    const Index n = static_cast<Index>(pts.size());
    Eigen::MatrixXd mean_g(n, ng), var_g(n, ng);

    Eigen::SparseMatrix<double, Eigen::RowMajor> zrows(rows.z);
    const Index m = fit.layout.total;

    detail::parallel_for(ng, threads_, [&](int g) {
        const auto& gp = fit.grid[static_cast<std::size_t>(g)];
        const auto& factor = factors_[static_cast<std::size_t>(g)];
        mean_g.col(g) = rows.z * gp.latent_mean;
        const int chunk = 64;
        for (Index j0 = 0; j0 < n; j0 += chunk) {
            const Index nc = std::min<Index>(chunk, n - j0);
            Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, nc);
            for (Index c = 0; c < nc; ++c)
                for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
                         zrows, static_cast<int>(j0 + c));
                     it; ++it)
                    rhs(it.col(), c) = it.value();
            Eigen::MatrixXd w = factor.solve(rhs);
            for (Index c = 0; c < nc; ++c)
                var_g(j0 + c, g) = rhs.col(c).dot(w.col(c)) + gp.nugget_var;
        }
    });

    const double lnc = std::log(threshold);
    std::vector<PointPrediction> out(pts.size());
    std::vector<double> w(static_cast<std::size_t>(ng)), mu(static_cast<std::size_t>(ng)),
        sd(static_cast<std::size_t>(ng));
    for (std::size_t g = 0; g < static_cast<std::size_t>(ng); ++g)
        w[g] = fit.grid[g].weight;
    for (Index i = 0; i < n; ++i) {
        auto& p = out[static_cast<std::size_t>(i)];
        if (!rows.inside[static_cast<std::size_t>(i)]) {
            p.inside = false;
            p.mean_log = p.sd_log = p.q025 = p.q50 = p.q975 = p.exc_prob =
                std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double m1 = 0.0, m2 = 0.0;
        for (int g = 0; g < ng; ++g) {
            mu[static_cast<std::size_t>(g)] = mean_g(i, g);
            sd[static_cast<std::size_t>(g)] = std::sqrt(std::max(var_g(i, g), 0.0));
            m1 += w[static_cast<std::size_t>(g)] * mean_g(i, g);
            m2 += w[static_cast<std::size_t>(g)] * (var_g(i, g) + mean_g(i, g) * mean_g(i, g));
        }
        p.mean_log = m1;
        p.sd_log = std::sqrt(std::max(m2 - m1 * m1, 0.0));
        p.q025 = gmix::mixture_quantile(w, mu, sd, 0.025);
        p.q50 = gmix::mixture_quantile(w, mu, sd, 0.5);
        p.q975 = gmix::mixture_quantile(w, mu, sd, 0.975);
        p.exc_prob = gmix::mixture_exceedance(w, mu, sd, lnc);
    }
    return out;
}

PredictionSet predict(const model::PosteriorFit& fit, const model::Dataset& grid,
                      double threshold, int threads) {
    if (grid.grid_rows.empty()) throw UsageError("predict: no grid rows supplied");
    Predictor pred(fit, threads);

    std::vector<model::DesignRequest> pts;
    pts.reserve(grid.grid_rows.size());
    for (const auto& r : grid.grid_rows) pts.push_back({r.x, r.y, r.t});

    auto pp = pred.at(pts, grid.covariate_names, grid.grid_covariates, threshold);

    PredictionSet ps;
    ps.threshold = threshold;
    ps.cells.resize(pp.size());
    int n_inside = 0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        static_cast<PointPrediction&>(ps.cells[i]) = pp[i];
        ps.cells[i].cell_id = grid.grid_rows[i].cell_id;
        ps.cells[i].x = grid.grid_rows[i].x;
        ps.cells[i].y = grid.grid_rows[i].y;
        ps.cells[i].month = grid.grid_rows[i].t;
        if (pp[i].inside) ++n_inside;
    }
    if (n_inside == 0) throw DataError("CellOutsideMesh: no requested cell is inside the mesh");
    return ps;
}

Eigen::MatrixXd sample_predictive(const model::PosteriorFit& fit,
                                  const model::Dataset& grid, int n_samples,
                                  std::uint64_t seed) {
    if (n_samples < 1) throw UsageError("sample_predictive: n_samples must be >= 1");
    Predictor pred(fit, 1);

    std::vector<model::DesignRequest> pts;
    for (const auto& r : grid.grid_rows) pts.push_back({r.x, r.y, r.t});
    const Eigen::MatrixXd cov_std =
        standardize_for(fit, grid.covariate_names, grid.grid_covariates);
    auto rows = model::design_rows(fit.spec, pts, grid.covariate_names, cov_std,
                                   *fit.msh, fit.layout);

    const int ng = static_cast<int>(fit.grid.size());
    std::vector<double> cumw(static_cast<std::size_t>(ng));
    double acc = 0.0;
    for (int g = 0; g < ng; ++g) {
        acc += fit.grid[static_cast<std::size_t>(g)].weight;
        cumw[static_cast<std::size_t>(g)] = acc;
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);

    const Index m = fit.layout.total;
    const Index nr = static_cast<Index>(pts.size());
    Eigen::MatrixXd out(nr, n_samples);
    Eigen::VectorXd zvec(m);
    for (int s = 0; s < n_samples; ++s) {
        const double u = ud(rng);
        int g = 0;
        while (g + 1 < ng && cumw[static_cast<std::size_t>(g)] < u) ++g;
        const auto& gp = fit.grid[static_cast<std::size_t>(g)];
        for (Index i = 0; i < m; ++i) zvec[i] = nd(rng);
        const Eigen::VectorXd latent =
            gp.latent_mean + pred.factors_[static_cast<std::size_t>(g)].half_solve(zvec);
        Eigen::VectorXd ys = rows.z * latent;
        const double nugget_sd = std::sqrt(gp.nugget_var);
        for (Index i = 0; i < nr; ++i) ys[i] += nugget_sd * nd(rng);
        out.col(s) = ys;
    }
    return out;
}

void write_csv(const PredictionSet& ps, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "cell_id,x_km,y_km,month,mean_log,sd_log,mean_conc,median_conc,q025,q975,exc_prob\n";
    char buf[512];
    for (const auto& c : ps.cells) {
        const double mean_conc =
            c.inside ? std::exp(c.mean_log + 0.5 * c.sd_log * c.sd_log)
                     : std::numeric_limits<double>::quiet_NaN();
        const double median_conc =
            c.inside ? std::exp(c.q50) : std::numeric_limits<double>::quiet_NaN();
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      c.cell_id.c_str(), c.x, c.y, c.month, c.mean_log, c.sd_log,
                      mean_conc, median_conc, c.q025, c.q975, c.exc_prob);
        f << buf;
    }
}

void write_pgm(const PredictionSet& ps, int month, const std::string& path) {
    std::set<double> xs, ys;
    std::map<std::pair<double, double>, double> vals;
    for (const auto& c : ps.cells) {
        if (c.month != month) continue;
        xs.insert(c.x);
        ys.insert(c.y);
        if (c.inside) vals[{c.x, c.y}] = std::exp(c.mean_log + 0.5 * c.sd_log * c.sd_log);
    }
    if (xs.empty()) throw UsageError("write_pgm: no cells for month " + std::to_string(month));
    double vmin = 1e300, vmax = -1e300;
    for (const auto& [k, v] : vals) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    const double span = vmax > vmin ? vmax - vmin : 1.0;

    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "P2\n" << xs.size() << " " << ys.size() << "\n255\n";
    // raster order: top row = largest y
    for (auto yit = ys.rbegin(); yit != ys.rend(); ++yit) {
        bool first = true;
        for (double x : xs) {
            auto it = vals.find({x, *yit});
            int pix = 0;
            if (it != vals.end())
                pix = static_cast<int>(std::lround(255.0 * (it->second - vmin) / span));
            f << (first ? "" : " ") << pix;
            first = false;
        }
        f << "\n";
    }
}

}  // namespace stfuse::predict
