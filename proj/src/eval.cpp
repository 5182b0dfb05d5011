#include "stfuse/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <set>

#include "optimize.hpp"
#include "stfuse/predict.hpp"
namespace stfuse::eval {

using model::Index;

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size() || y.size() < 2)
        throw DimensionMismatch("r_squared: need equal lengths >= 2");
    const double n = static_cast<double>(y.size());
    double my = 0.0, mh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        my += y[i];
        mh += y_hat[i];
    }
    my /= n;
    mh /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sxy += (y[i] - my) * (y_hat[i] - mh);
        sxx += (y[i] - my) * (y[i] - my);
        syy += (y_hat[i] - mh) * (y_hat[i] - mh);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw NumericalError("DegenerateVariance: constant input to r_squared");
    return (sxy * sxy) / (sxx * syy);
}

double pmcc(std::span<const double> y, std::span<const double> y_hat,
            std::span<const double> var_hat) {
    if (y.size() != y_hat.size() || y.size() != var_hat.size())
        throw DimensionMismatch("pmcc: length mismatch");
    double gof = 0.0, pen = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (var_hat[i] < 0.0) throw NumericalError("NegativeVariance in pmcc");
        gof += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        pen += var_hat[i];
    }
    return gof + pen;
}

PredictiveMetrics predictive_metrics(std::span<const double> y,
                                     std::span<const double> y_star_mean,
                                     std::span<const double> y_star_q025,
                                     std::span<const double> y_star_q975) {
    if (y.size() != y_star_mean.size() || y.size() != y_star_q025.size() ||
        y.size() != y_star_q975.size())
        throw DimensionMismatch("predictive_metrics: length mismatch");
    PredictiveMetrics m;
    const double n = static_cast<double>(y.size());
    double sq = 0.0, covn = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - y_star_mean[i];
        sq += d * d;
        m.bias += d;
        if (y[i] >= y_star_q025[i] && y[i] <= y_star_q975[i]) covn += 1.0;
    }
    m.rmse = std::sqrt(sq / n);
    m.bias /= n;
    m.cov = covn / n;
    try {
        m.r2 = r_squared(y, y_star_mean);
    } catch (const NumericalError&) {
        m.r2 = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

// ---------------------------------------------------------------------------
// Fold plans
// ---------------------------------------------------------------------------

FoldPlan temporal_kfold(const model::Dataset& data, int k) {
    if (k < 2 || k > data.n_months)
        throw UsageError("temporal_kfold: k must be in [2, n_months]");
    FoldPlan plan;
    plan.kind = FoldPlan::Kind::TemporalKfold;
    plan.k = k;
    // consecutive near-equal periods: boundaries at round(T i / k)
    std::vector<int> upper(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f)
        upper[static_cast<std::size_t>(f)] =
            static_cast<int>(std::lround(static_cast<double>(data.n_months) * (f + 1) / k));
    auto fold_of_month = [&](int t) {
        for (int f = 0; f < k; ++f)
            if (t <= upper[static_cast<std::size_t>(f)]) return f;
        return k - 1;
    };
    plan.assignment.reserve(data.observations.size());
    for (const auto& o : data.observations) plan.assignment.push_back(fold_of_month(o.t));
    int lower = 1;
    for (int f = 0; f < k; ++f) {
        plan.labels.push_back("months_" + std::to_string(lower) + "-" +
                              std::to_string(upper[static_cast<std::size_t>(f)]));
        lower = upper[static_cast<std::size_t>(f)] + 1;
    }
    return plan;
}

FoldPlan spatial_kblock(const model::Dataset& data, int k) {
    if (k != 6) throw UsageError("spatial_kblock: the 2 x 3 construction requires k = 6");
    struct Site {
        std::string id;
        double x, y;
    };
    std::map<std::string, Site> site_map;
    for (const auto& o : data.observations) site_map[o.site_id] = {o.site_id, o.x, o.y};
    std::vector<Site> sites;
    for (const auto& [id, s] : site_map) sites.push_back(s);
    if (sites.size() < 6) throw UsageError("spatial_kblock: need at least 6 sites");

    // northern/southern rows split at the site-count y-median
    std::sort(sites.begin(), sites.end(), [](const Site& a, const Site& b) {
        return a.y < b.y || (a.y == b.y && a.x < b.x) ||
               (a.y == b.y && a.x == b.x && a.id < b.id);
    });
    const std::size_t n = sites.size();
    const std::size_t n_south = n / 2;
    std::vector<Site> south(sites.begin(), sites.begin() + static_cast<long>(n_south));
    std::vector<Site> north(sites.begin() + static_cast<long>(n_south), sites.end());

    // per-row x-tertiles by site count: west, mid, east
    auto split3 = [](std::vector<Site>& row) {
        std::sort(row.begin(), row.end(), [](const Site& a, const Site& b) {
            return a.x < b.x || (a.x == b.x && a.y < b.y) ||
                   (a.x == b.x && a.y == b.y && a.id < b.id);
        });
        const std::size_t m = row.size();
        const std::size_t c1 = (m + 2) / 3;        // west gets the first remainder
        const std::size_t c2 = c1 + (m + 1) / 3;   // mid the second
        std::array<std::vector<Site>, 3> cols;
        for (std::size_t i = 0; i < m; ++i)
            cols[i < c1 ? 0 : (i < c2 ? 1 : 2)].push_back(row[i]);
        return cols;
    };
    auto north_cols = split3(north);
    auto south_cols = split3(south);

    FoldPlan plan;
    plan.kind = FoldPlan::Kind::SpatialKblock;
    plan.k = 6;
    plan.labels = {"NW", "N", "NE", "SW", "S", "SE"};
    std::map<std::string, int> fold_of_site;
    for (int c = 0; c < 3; ++c) {
        for (const auto& s : north_cols[static_cast<std::size_t>(c)]) fold_of_site[s.id] = c;
        for (const auto& s : south_cols[static_cast<std::size_t>(c)]) fold_of_site[s.id] = 3 + c;
    }
    plan.assignment.reserve(data.observations.size());
    for (const auto& o : data.observations) plan.assignment.push_back(fold_of_site.at(o.site_id));
    return plan;
}

// ---------------------------------------------------------------------------
// Cross-validation driver
// ---------------------------------------------------------------------------

CvResult cross_validate(const model::ModelSpec& spec, const model::Dataset& data,
                        std::shared_ptr<const mesh::Mesh> msh, const FoldPlan& plan,
                        const model::FitConfig& config) {
    if (plan.assignment.size() != data.observations.size())
        throw DimensionMismatch("cross_validate: plan does not match data");

    struct FoldOut {
        FoldMetrics metrics;
        std::vector<double> y, mean, q025, q975;
    };
    std::vector<FoldOut> out(static_cast<std::size_t>(plan.k));
    model::FitConfig fold_config = config;
    fold_config.threads = 1;  // parallelism lives at the fold level

    std::atomic<bool> failed{false};
    std::string fail_msg;
    std::mutex fail_mutex;

    detail::parallel_for(plan.k, config.threads, [&](int f) {
        if (failed.load()) return;
        try {
            model::Dataset train, test;
            train.covariate_names = test.covariate_names = data.covariate_names;
            train.n_months = test.n_months = data.n_months;
            std::vector<Index> train_rows, test_rows;
            for (std::size_t i = 0; i < data.observations.size(); ++i) {
                if (plan.assignment[i] == f) {
                    test.observations.push_back(data.observations[i]);
                    test_rows.push_back(static_cast<Index>(i));
                } else {
                    train.observations.push_back(data.observations[i]);
                    train_rows.push_back(static_cast<Index>(i));
                }
            }
            if (train.observations.empty())
                throw DataError("EmptyTrainingFold: fold " + std::to_string(f));
            auto& fo = out[static_cast<std::size_t>(f)];
            fo.metrics.fold = f;
            fo.metrics.label = plan.labels[static_cast<std::size_t>(f)];
            if (test.observations.empty()) return;

            train.obs_covariates.resize(static_cast<Index>(train_rows.size()),
                                        data.obs_covariates.cols());
            for (std::size_t r = 0; r < train_rows.size(); ++r)
                train.obs_covariates.row(static_cast<Index>(r)) =
                    data.obs_covariates.row(train_rows[r]);
            Eigen::MatrixXd test_cov(static_cast<Index>(test_rows.size()),
                                     data.obs_covariates.cols());
            for (std::size_t r = 0; r < test_rows.size(); ++r)
                test_cov.row(static_cast<Index>(r)) = data.obs_covariates.row(test_rows[r]);

            auto fit = model::fit(spec, train, msh, fold_config);
            predict::Predictor pred(fit, 1);
            std::vector<model::DesignRequest> pts;
            for (const auto& o : test.observations) pts.push_back({o.x, o.y, o.t});
            auto pp = pred.at(pts, data.covariate_names, test_cov, 10.0);

            for (std::size_t i = 0; i < pp.size(); ++i) {
                if (!pp[i].inside)
                    throw DataError("PointOutsideMesh in held-out fold " + std::to_string(f));
                fo.y.push_back(test.observations[i].y_log);
                fo.mean.push_back(pp[i].mean_log);
                fo.q025.push_back(pp[i].q025);
                fo.q975.push_back(pp[i].q975);
            }
            fo.metrics.metrics = predictive_metrics(fo.y, fo.mean, fo.q025, fo.q975);
            fo.metrics.n_test = static_cast<int>(fo.y.size());
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lk(fail_mutex);
            failed = true;
            fail_msg = e.what();
        }
    });
    if (failed) throw DataError("cross_validate: " + fail_msg);

    CvResult cv;
    std::vector<double> pooled_y, pooled_mean, pooled_q025, pooled_q975;
    for (const auto& fo : out) {
        cv.folds.push_back(fo.metrics);
        pooled_y.insert(pooled_y.end(), fo.y.begin(), fo.y.end());
        pooled_mean.insert(pooled_mean.end(), fo.mean.begin(), fo.mean.end());
        pooled_q025.insert(pooled_q025.end(), fo.q025.begin(), fo.q025.end());
        pooled_q975.insert(pooled_q975.end(), fo.q975.begin(), fo.q975.end());
    }
    cv.pooled = predictive_metrics(pooled_y, pooled_mean, pooled_q025, pooled_q975);
    cv.n_total = static_cast<int>(pooled_y.size());
    return cv;
}

void write_cv_csv(const CvResult& cv, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "fold,label,r2,rmse,bias,cov\n";
    char buf[256];
    for (const auto& fm : cv.folds) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g,%.10g,%.10g\n", fm.fold,
                      fm.label.c_str(), fm.metrics.r2, fm.metrics.rmse, fm.metrics.bias,
                      fm.metrics.cov);
        f << buf;
    }
    std::snprintf(buf, sizeof(buf), "pooled,all,%.10g,%.10g,%.10g,%.10g\n", cv.pooled.r2,
                  cv.pooled.rmse, cv.pooled.bias, cv.pooled.cov);
    f << buf;
}

// ---------------------------------------------------------------------------
// Radar table
// ---------------------------------------------------------------------------

std::vector<RadarRow> radar_table(std::span<const ModelMetricsRow> rows) {
    if (rows.empty()) return {};
    auto pct_higher_better = [&](auto get) {
        double best = -1e300, worst = 1e300;
        for (const auto& r : rows) {
            best = std::max(best, get(r));
            worst = std::min(worst, get(r));
        }
        return [best, worst, get](const ModelMetricsRow& r) {
            if (best == worst) return 100.0;
            return 100.0 * (get(r) - worst) / (best - worst);
        };
    };
    auto pct_lower_better = [&](auto get) {
        double best = 1e300, worst = -1e300;
        for (const auto& r : rows) {
            best = std::min(best, get(r));
            worst = std::max(worst, get(r));
        }
        return [best, worst, get](const ModelMetricsRow& r) {
            if (best == worst) return 100.0;
            return 100.0 * (worst - get(r)) / (worst - best);
        };
    };
    auto f_r2 = pct_higher_better([](const ModelMetricsRow& r) { return r.r2; });
    auto f_pmcc = pct_lower_better([](const ModelMetricsRow& r) { return r.pmcc; });
    auto f_rmse = pct_lower_better([](const ModelMetricsRow& r) { return r.rmse; });
    auto f_bias = pct_lower_better([](const ModelMetricsRow& r) { return std::abs(r.bias); });
    auto f_cov =
        pct_lower_better([](const ModelMetricsRow& r) { return std::abs(r.cov - 0.95); });

    std::vector<RadarRow> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        RadarRow rr;
        rr.model = r.model;
        rr.r2_pct = f_r2(r);
        rr.pmcc_pct = f_pmcc(r);
        rr.rmse_pct = f_rmse(r);
        rr.bias_pct = f_bias(r);
        rr.cov_pct = f_cov(r);
        const double rad[5] = {rr.r2_pct / 100.0, rr.pmcc_pct / 100.0, rr.rmse_pct / 100.0,
                               rr.bias_pct / 100.0, rr.cov_pct / 100.0};
        const double s = std::sin(2.0 * std::numbers::pi / 5.0);
        for (int i = 0; i < 5; ++i) rr.area += 0.5 * rad[i] * rad[(i + 1) % 5] * s;
        out.push_back(rr);
    }
    return out;
}

void write_radar_csv(std::span<const RadarRow> rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "model,r2_pct,pmcc_pct,rmse_pct,bias_pct,cov_pct,area\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      r.model.c_str(), r.r2_pct, r.pmcc_pct, r.rmse_pct, r.bias_pct,
                      r.cov_pct, r.area);
        f << buf;
    }
}

}  // namespace stfuse::eval
