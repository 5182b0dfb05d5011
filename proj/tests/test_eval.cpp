#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "stfuse/eval.hpp"

using namespace stfuse;
using model::Dataset;

namespace {

Dataset month_dataset(int n_sites, int n_months, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(1.0, 19.0);
    std::normal_distribution<double> nd;
    Dataset d;
    d.covariate_names = {"pcm"};
    d.n_months = n_months;
    d.obs_covariates.resize(n_sites * n_months, 1);
    int row = 0;
    for (int s = 0; s < n_sites; ++s) {
        const double x = u(rng), y = u(rng);
        for (int t = 1; t <= n_months; ++t) {
            d.observations.push_back({"s" + std::to_string(s), x, y, t, nd(rng)});
            d.obs_covariates(row++, 0) = nd(rng);
        }
    }
    return d;
}

}  // namespace

TEST_CASE("r_squared: exactness and affine invariance") {
    std::vector<double> y{1, 2, 3, 4};
    CHECK(eval::r_squared(y, y) == doctest::Approx(1.0).epsilon(1e-14));

    std::vector<double> yh;
    for (double v : y) yh.push_back(2.5 * v - 7.0);
    CHECK(eval::r_squared(y, yh) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> y2{1.1, 1.9, 3.2, 3.8};
    // direct formula evaluation
    const double my = 2.5, mh = (1.1 + 1.9 + 3.2 + 3.8) / 4.0;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += (y[static_cast<std::size_t>(i)] - my) * (y2[static_cast<std::size_t>(i)] - mh);
        sxx += std::pow(y[static_cast<std::size_t>(i)] - my, 2);
        syy += std::pow(y2[static_cast<std::size_t>(i)] - mh, 2);
    }
    CHECK(eval::r_squared(y, y2) == doctest::Approx(sxy * sxy / (sxx * syy)).epsilon(1e-12));

    std::vector<double> c{1, 1, 1, 1};
    CHECK_THROWS_AS(eval::r_squared(y, c), NumericalError);
}

TEST_CASE("r_squared: invariant under positive affine transforms (property)") {
    std::mt19937 rng(3);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ua(0.1, 5.0), ub(-10.0, 10.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> y(30), yh(30);
        for (int i = 0; i < 30; ++i) {
            y[static_cast<std::size_t>(i)] = nd(rng);
            yh[static_cast<std::size_t>(i)] = 0.8 * y[static_cast<std::size_t>(i)] + 0.3 * nd(rng);
        }
        const double base = eval::r_squared(y, yh);
        const double a = ua(rng), b = ub(rng);
        std::vector<double> ya(30), yha(30);
        for (int i = 0; i < 30; ++i) {
            ya[static_cast<std::size_t>(i)] = a * y[static_cast<std::size_t>(i)] + b;
            yha[static_cast<std::size_t>(i)] = a * yh[static_cast<std::size_t>(i)] + b;
        }
        CHECK(std::abs(eval::r_squared(ya, yh) - base) < 1e-12);
        CHECK(std::abs(eval::r_squared(y, yha) - base) < 1e-12);
    }
}

TEST_CASE("pmcc: hand cases and symmetry") {
    std::vector<double> y{1, 2}, yh{1, 3}, v{0.5, 0.5};
    CHECK(eval::pmcc(y, yh, v) == 2.0);

    std::vector<double> z{0, 0};
    CHECK(eval::pmcc(y, y, z) == 0.0);

    std::vector<double> yr{2, 1}, yhr{3, 1}, vr{0.5, 0.5};
    CHECK(eval::pmcc(yr, yhr, vr) == eval::pmcc(y, yh, v));

    std::vector<double> vneg{-0.1, 0.5};
    CHECK_THROWS_AS(eval::pmcc(y, yh, vneg), NumericalError);
}

TEST_CASE("predictive_metrics: hand cases") {
    std::vector<double> y{1, 2, 3};
    auto m = eval::predictive_metrics(y, y, y, y);
    CHECK(m.rmse == 0.0);
    CHECK(m.bias == 0.0);
    CHECK(m.cov == 1.0);
    CHECK(m.r2 == doctest::Approx(1.0));

    std::vector<double> y0{0, 0}, ys{1, -1}, lo{-9e99, -9e99}, hi{9e99, 9e99};
    auto m2 = eval::predictive_metrics(y0, ys, lo, hi);
    CHECK(m2.rmse == doctest::Approx(1.0));
    CHECK(m2.bias == doctest::Approx(0.0));
    CHECK(m2.cov == 1.0);
}

TEST_CASE("temporal_kfold: 72 months, k=6 gives calendar-year folds") {
    auto d = month_dataset(3, 72, 1);
    auto plan = eval::temporal_kfold(d, 6);
    REQUIRE(plan.assignment.size() == d.observations.size());
    for (std::size_t i = 0; i < d.observations.size(); ++i) {
        const int t = d.observations[i].t;
        CHECK(plan.assignment[i] == (t - 1) / 12);
    }
    // disjoint and covering by construction of the per-observation mapping
    std::vector<int> counts(6, 0);
    for (int a : plan.assignment) {
        REQUIRE(a >= 0);
        REQUIRE(a < 6);
        ++counts[static_cast<std::size_t>(a)];
    }
    for (int c : counts) CHECK(c == 3 * 12);
}

TEST_CASE("temporal_kfold: fold depends only on month") {
    auto d = month_dataset(5, 14, 2);
    auto plan = eval::temporal_kfold(d, 4);
    std::map<int, int> fold_of_t;
    for (std::size_t i = 0; i < d.observations.size(); ++i) {
        const int t = d.observations[i].t;
        auto it = fold_of_t.find(t);
        if (it == fold_of_t.end())
            fold_of_t[t] = plan.assignment[i];
        else
            CHECK(it->second == plan.assignment[i]);
    }
}

TEST_CASE("spatial_kblock: labels, balance, site-consistency") {
    for (unsigned seed : {1u, 2u, 3u}) {
        auto d = month_dataset(44, 3, seed);
        auto plan = eval::spatial_kblock(d, 6);
        CHECK(plan.labels == std::vector<std::string>{"NW", "N", "NE", "SW", "S", "SE"});

        std::map<std::string, int> site_fold;
        std::vector<std::set<std::string>> sites_per_fold(6);
        for (std::size_t i = 0; i < d.observations.size(); ++i) {
            const auto& sid = d.observations[i].site_id;
            auto it = site_fold.find(sid);
            if (it == site_fold.end())
                site_fold[sid] = plan.assignment[i];
            else
                CHECK(it->second == plan.assignment[i]);  // site moves as a unit
            sites_per_fold[static_cast<std::size_t>(plan.assignment[i])].insert(sid);
        }
        std::size_t mn = 1e9, mx = 0;
        for (const auto& s : sites_per_fold) {
            mn = std::min(mn, s.size());
            mx = std::max(mx, s.size());
        }
        CHECK(mx - mn <= 1);

        // geometry: every NW site lies north of every SW site etc. is not
        // required; N/S split is, by construction on the y median
        double max_south = -1e300, min_north = 1e300;
        std::map<std::string, std::pair<double, double>> coord;
        for (const auto& o : d.observations) coord[o.site_id] = {o.x, o.y};
        for (const auto& [sid, f] : site_fold) {
            if (f < 3)
                min_north = std::min(min_north, coord[sid].second);
            else
                max_south = std::max(max_south, coord[sid].second);
        }
        CHECK(max_south <= min_north);
    }
    auto d = month_dataset(10, 2, 9);
    CHECK_THROWS_AS(eval::spatial_kblock(d, 5), UsageError);
}

TEST_CASE("cross_validate: pooled identity and determinism") {
    std::mt19937 rng(12);
    auto d = month_dataset(8, 6, 4);
    std::vector<mesh::Point> pts;
    for (const auto& o : d.observations) pts.push_back({o.x, o.y});
    std::vector<mesh::Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto msh = std::make_shared<mesh::Mesh>(mesh::build_mesh(pts, dom, 7.0, 10.0, 4.0));

    model::ModelSpec spec;
    spec.fixed_effects = {"intercept", "pcm"};
    spec.st_field = model::StFieldTerm{};
    model::FitConfig cfg;
    cfg.fix_hyperparams = true;
    model::Hyperparams th;
    th.nugget_var = 0.1;
    th.st_range = 6.0;
    th.st_sd = 0.4;
    th.st_a = 0.8;
    cfg.init = th;
    cfg.grid_style = model::FitConfig::GridStyle::ModeOnly;

    auto plan = eval::temporal_kfold(d, 3);
    auto cv1 = eval::cross_validate(spec, d, msh, plan, cfg);
    auto cv2 = eval::cross_validate(spec, d, msh, plan, cfg);
    CHECK(cv1.pooled.rmse == cv2.pooled.rmse);  // deterministic

    // pooled RMSE^2 equals the fold-size-weighted mean of fold RMSE^2
    double wsum = 0.0, acc = 0.0;
    for (const auto& fm : cv1.folds) {
        acc += fm.metrics.rmse * fm.metrics.rmse * fm.n_test;
        wsum += fm.n_test;
    }
    CHECK(std::abs(cv1.pooled.rmse * cv1.pooled.rmse - acc / wsum) < 1e-12);

    const std::string path = "/tmp/stfuse_cv.csv";
    eval::write_cv_csv(cv1, path);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "fold,label,r2,rmse,bias,cov");
    int rows = 0;
    std::string line;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 3 + 1);  // folds + pooled
}

TEST_CASE("cross_validate: empty training fold rejected") {
    auto d = month_dataset(4, 8, 5);
    // keep only the first 4 months: fold 1 of a k=2 plan has no training data
    Dataset d2 = d;
    d2.observations.clear();
    std::vector<int> rows;
    for (std::size_t i = 0; i < d.observations.size(); ++i)
        if (d.observations[i].t <= 4) {
            d2.observations.push_back(d.observations[i]);
            rows.push_back(static_cast<int>(i));
        }
    d2.obs_covariates.resize(static_cast<int>(rows.size()), 1);
    for (std::size_t r = 0; r < rows.size(); ++r)
        d2.obs_covariates.row(static_cast<int>(r)) = d.obs_covariates.row(rows[r]);

    auto plan = eval::temporal_kfold(d2, 2);
    std::vector<mesh::Point> pts;
    for (const auto& o : d2.observations) pts.push_back({o.x, o.y});
    std::vector<mesh::Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto msh = std::make_shared<mesh::Mesh>(mesh::build_mesh(pts, dom, 8.0, 10.0, 4.0));
    model::ModelSpec spec;
    spec.fixed_effects = {"intercept"};
    model::FitConfig cfg;
    cfg.fix_hyperparams = true;
    model::Hyperparams th;
    th.nugget_var = 0.2;
    cfg.init = th;
    CHECK_THROWS_AS(eval::cross_validate(spec, d2, msh, plan, cfg), DataError);
}

TEST_CASE("nested models: in-sample RSS does not increase with a vague extra term") {
    auto d = month_dataset(10, 4, 6);
    std::vector<mesh::Point> pts;
    for (const auto& o : d.observations) pts.push_back({o.x, o.y});
    std::vector<mesh::Point> dom{{0, 0}, {20, 0}, {20, 20}, {0, 20}};
    auto msh = std::make_shared<mesh::Mesh>(mesh::build_mesh(pts, dom, 7.0, 10.0, 4.0));

    model::FitConfig cfg;
    cfg.fix_hyperparams = true;
    model::Hyperparams th;
    th.nugget_var = 0.3;
    cfg.init = th;
    cfg.grid_style = model::FitConfig::GridStyle::ModeOnly;

    model::ModelSpec small;
    small.fixed_effects = {"intercept"};
    small.fixed_prior_variance = 1e8;
    model::ModelSpec big = small;
    big.fixed_effects = {"intercept", "pcm"};

    auto f_small = model::fit(small, d, msh, cfg);
    auto f_big = model::fit(big, d, msh, cfg);
    auto rss = [&](const model::PosteriorFit& f) {
        double s = 0.0;
        for (std::size_t i = 0; i < d.observations.size(); ++i)
            s += std::pow(d.observations[i].y_log - f.fitted_mean[static_cast<int>(i)], 2);
        return s;
    };
    CHECK(rss(f_big) <= rss(f_small) + 1e-6);
}

TEST_CASE("radar table: anchors and area") {
    std::vector<eval::ModelMetricsRow> rows{
        {"m1", 0.94, 185.0, 0.19, -0.007, 0.90},
        {"m2", 0.82, 403.0, 0.21, 0.004, 0.09},
        {"m3", 0.94, 203.0, 0.35, 0.062, 0.99},
    };
    auto radar = eval::radar_table(rows);
    REQUIRE(radar.size() == 3);
    CHECK(radar[0].r2_pct == 100.0);   // best r2 (tied) -> 100
    CHECK(radar[1].r2_pct == 0.0);     // worst r2 -> 0
    CHECK(radar[0].pmcc_pct == 100.0); // lowest pmcc
    CHECK(radar[1].pmcc_pct == 0.0);
    CHECK(radar[2].cov_pct == 100.0);  // cov 0.99 sits nearest 0.95
    CHECK(radar[1].cov_pct == 0.0);
    for (const auto& r : radar) {
        CHECK(r.area >= 0.0);
        CHECK(r.area <= 2.5);  // regular pentagon bound (5/2 sin 72)
    }
    CHECK(radar[0].area > radar[1].area);

    eval::write_radar_csv(radar, "/tmp/stfuse_radar.csv");
    std::ifstream f("/tmp/stfuse_radar.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "model,r2_pct,pmcc_pct,rmse_pct,bias_pct,cov_pct,area");
}
