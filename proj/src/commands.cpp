#include "stfuse/commands.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "stfuse/bundle.hpp"
#include "stfuse/eval.hpp"
#include "stfuse/ingest.hpp"
#include "stfuse/predict.hpp"
#include "stfuse/simulate.hpp"

namespace stfuse::cli {

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

config::RunConfig load_config(const CommonArgs& args) {
    auto rc = config::RunConfig::from_ini(config::Ini::parse_file(args.config_path));
    if (args.seed_set) rc.seed = args.seed;
    if (args.threads > 0) rc.fit.threads = args.threads;
    return rc;
}

void write_manifest(const config::RunConfig& rc, const CommonArgs& args,
                    const std::string& command, double wall_s) {
    std::filesystem::create_directories(rc.output_dir);
    std::ofstream f(rc.output_dir + "/manifest.txt");
    char buf[64];
    f << "tool = stfuse\n";
    f << "version = " << kVersion << "\n";
    f << "command = " << command << "\n";
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config::file_hash(args.config_path)));
    f << "config_hash = " << buf << "\n";
    f << "seed = " << rc.seed << "\n";
    f << "threads = " << rc.fit.threads << "\n";
    std::snprintf(buf, sizeof(buf), "%.3f", wall_s);
    f << "wall_time_s = " << buf << "\n";
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void write_fitted_csv(const model::PosteriorFit& fit, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "site_id,month,observed,fitted_mean,fitted_var\n";
    char buf[160];
    auto fv = model::fitted_values(fit);
    for (std::size_t i = 0; i < fv.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.10g,%.10g,%.10g\n", fv[i].site_id.c_str(),
                      fv[i].t, fit.data.observations[i].y_log, fv[i].mean, fv[i].var);
        f << buf;
    }
}

void write_summary(const model::PosteriorFit& fit, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    char buf[240];
    std::vector<double> y, yhat, vhat;
    for (std::size_t i = 0; i < fit.data.observations.size(); ++i) {
        y.push_back(fit.data.observations[i].y_log);
        yhat.push_back(fit.fitted_mean[static_cast<long>(i)]);
        vhat.push_back(fit.fitted_var[static_cast<long>(i)]);
    }
    f << "model_fit:\n";
    std::snprintf(buf, sizeof(buf), "  r2 = %.6f\n", eval::r_squared(y, yhat));
    f << buf;
    std::snprintf(buf, sizeof(buf), "  pmcc = %.6f\n", eval::pmcc(y, yhat, vhat));
    f << buf;
    f << "fixed_effects: (name mean sd q025 q50 q975)\n";
    for (const auto& r : fit.fixed_effects) {
        std::snprintf(buf, sizeof(buf), "  %s %.6g %.6g %.6g %.6g %.6g\n", r.name.c_str(),
                      r.mean, r.sd, r.q025, r.q50, r.q975);
        f << buf;
    }
    f << "hyperparameters: (name mean sd q025 q50 q975)\n";
    for (const auto& r : fit.theta_summary) {
        std::snprintf(buf, sizeof(buf), "  %s %.6g %.6g %.6g %.6g %.6g\n", r.name.c_str(),
                      r.mean, r.sd, r.q025, r.q50, r.q975);
        f << buf;
    }
    for (const auto& w : fit.warnings) f << "warning: " << w << "\n";
}

int run_simulate(const CommonArgs& args) {
    Stopwatch sw;
    auto rc = load_config(args);
    auto sim = simulate::run(rc.spec, rc.simulate, rc, rc.seed);
    simulate::write_outputs(sim, rc.spec, rc.output_dir);
    write_manifest(rc, args, "simulate", sw.seconds());
    std::printf("simulate: %zu observations, %zu grid rows -> %s\n",
                sim.data.observations.size(), sim.data.grid_rows.size(),
                rc.output_dir.c_str());
    return 0;
}

int run_mesh(const CommonArgs& args) {
    Stopwatch sw;
    auto rc = load_config(args);
    ingest::IngestReport rep;
    auto data = ingest::ingest(rc, &rep);
    auto msh = build_mesh_for(data, rc);
    msh->export_csv(rc.output_dir + "/vertices.csv", rc.output_dir + "/triangles.csv");
    write_manifest(rc, args, "mesh", sw.seconds());
    std::printf("mesh: %lld vertices, %zu triangles\n",
                static_cast<long long>(msh->n_vertices()), msh->triangles().size());
    return 0;
}

int run_fit(const CommonArgs& args) {
    Stopwatch sw;
    auto rc = load_config(args);
    ingest::IngestReport rep;
    auto data = ingest::ingest(rc, &rep);
    auto msh = build_mesh_for(data, rc);
    auto fit = model::fit(rc.spec, data, msh, rc.fit);
    std::filesystem::create_directories(rc.output_dir);
    bundle::save_fit(fit, rc.output_dir + "/fit.bundle");
    write_fitted_csv(fit, rc.output_dir + "/fitted.csv");
    write_summary(fit, rc.output_dir + "/summary.txt");
    write_manifest(rc, args, "fit", sw.seconds());
    for (const auto& w : rep.warnings) std::printf("note: %s\n", w.c_str());
    for (const auto& w : fit.warnings) std::printf("warning: %s\n", w.c_str());
    std::printf("fit: %zu observations, %zu grid points -> %s/fit.bundle\n",
                data.observations.size(), fit.grid.size(), rc.output_dir.c_str());
    return 0;
}

int run_predict(const CommonArgs& args) {
    Stopwatch sw;
    auto rc = load_config(args);
    auto fit = bundle::load_fit(rc.output_dir + "/fit.bundle");
    if (rc.grid_path.empty()) throw UsageError("predict needs [paths] grid");

    model::Dataset grid;
    grid.covariate_names = fit.data.covariate_names;
    grid.n_months = fit.data.n_months;
    ingest::read_grid(rc, grid);

    auto ps = predict::predict(fit, grid, rc.threshold, rc.fit.threads);
    predict::write_csv(ps, rc.output_dir + "/predictions.csv");
    if (rc.emit_pgm) {
        std::set<int> months;
        for (const auto& c : ps.cells) months.insert(c.month);
        for (int m : months)
            predict::write_pgm(ps, m, rc.output_dir + "/mean_m" + std::to_string(m) + ".pgm");
    }
    write_manifest(rc, args, "predict", sw.seconds());
    std::printf("predict: %zu cell-months -> %s/predictions.csv\n", ps.cells.size(),
                rc.output_dir.c_str());
    return 0;
}

int run_cv(const CommonArgs& args, const std::string& kind_flag, int k_flag) {
    Stopwatch sw;
    auto rc = load_config(args);
    if (!kind_flag.empty()) rc.cv_kind = kind_flag;
    if (k_flag > 0) rc.cv_k = k_flag;
    ingest::IngestReport rep;
    auto data = ingest::ingest(rc, &rep);
    auto msh = build_mesh_for(data, rc);

    eval::FoldPlan plan;
    if (rc.cv_kind == "temporal")
        plan = eval::temporal_kfold(data, rc.cv_k);
    else if (rc.cv_kind == "spatial")
        plan = eval::spatial_kblock(data, rc.cv_k);
    else
        throw UsageError("cv kind must be temporal|spatial");

    auto cv = eval::cross_validate(rc.spec, data, msh, plan, rc.fit);
    std::filesystem::create_directories(rc.output_dir);
    eval::write_cv_csv(cv, rc.output_dir + "/cv.csv");
    write_manifest(rc, args, "cv", sw.seconds());
    std::printf("cv: %d folds, pooled rmse %.4f cov %.3f -> %s/cv.csv\n",
                static_cast<int>(cv.folds.size()), cv.pooled.rmse, cv.pooled.cov,
                rc.output_dir.c_str());
    return 0;
}

int run_metrics(const CommonArgs& args, const std::string& models_path) {
    Stopwatch sw;
    auto rc = load_config(args);
    auto csv = ingest::Csv::read_file(models_path);
    for (const char* col : {"model", "r2", "pmcc", "rmse", "bias", "cov"})
        if (csv.column(col) < 0)
            throw DataError("models CSV misses column '" + std::string(col) + "'");
    std::vector<eval::ModelMetricsRow> rows;
    for (const auto& r : csv.rows) {
        eval::ModelMetricsRow row;
        row.model = r[static_cast<std::size_t>(csv.column("model"))];
        row.r2 = std::stod(r[static_cast<std::size_t>(csv.column("r2"))]);
        row.pmcc = std::stod(r[static_cast<std::size_t>(csv.column("pmcc"))]);
        row.rmse = std::stod(r[static_cast<std::size_t>(csv.column("rmse"))]);
        row.bias = std::stod(r[static_cast<std::size_t>(csv.column("bias"))]);
        row.cov = std::stod(r[static_cast<std::size_t>(csv.column("cov"))]);
        rows.push_back(row);
    }
    auto radar = eval::radar_table(rows);
    std::filesystem::create_directories(rc.output_dir);
    eval::write_radar_csv(radar, rc.output_dir + "/radar.csv");
    write_manifest(rc, args, "metrics", sw.seconds());
    std::printf("metrics: %zu models -> %s/radar.csv\n", radar.size(), rc.output_dir.c_str());
    return 0;
}

}  // namespace

std::shared_ptr<const mesh::Mesh> build_mesh_for(const model::Dataset& data,
                                                 const config::RunConfig& rc) {
    std::set<std::pair<double, double>> uniq;
    std::vector<mesh::Point> sites;
    double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
    for (const auto& o : data.observations) {
        if (uniq.insert({o.x, o.y}).second) sites.push_back({o.x, o.y});
        minx = std::min(minx, o.x);
        maxx = std::max(maxx, o.x);
        miny = std::min(miny, o.y);
        maxy = std::max(maxy, o.y);
    }
    for (const auto& g : data.grid_rows) {
        minx = std::min(minx, g.x);
        maxx = std::max(maxx, g.x);
        miny = std::min(miny, g.y);
        maxy = std::max(maxy, g.y);
    }
    std::vector<mesh::Point> domain{{minx, miny}, {maxx, miny}, {maxx, maxy}, {minx, maxy}};
    return std::make_shared<mesh::Mesh>(mesh::build_mesh(
        sites, domain, rc.max_edge_inner, rc.max_edge_outer, rc.offset, rc.max_vertices));
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"spatiotemporal Bayesian data-fusion engine"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string cv_kind;
    int cv_k = 0;
    std::string models_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "config file")->required();
        sub->add_option("--seed", args.seed, "seed override")
            ->each([&](const std::string&) { args.seed_set = true; });
        sub->add_option("--threads", args.threads, "worker count override");
    };

    auto* sim = app.add_subcommand("simulate", "generate synthetic data from the model prior");
    add_common(sim);
    auto* msh = app.add_subcommand("mesh", "build and export the triangulation");
    add_common(msh);
    auto* fit = app.add_subcommand("fit", "fit the model and save a fit bundle");
    add_common(fit);
    auto* pred = app.add_subcommand("predict", "predict on the grid from a fit bundle");
    add_common(pred);
    auto* cv = app.add_subcommand("cv", "cross-validation");
    add_common(cv);
    cv->add_option("--kind", cv_kind, "temporal|spatial");
    cv->add_option("--k", cv_k, "number of folds");
    auto* met = app.add_subcommand("metrics", "radar comparison table from model metrics");
    add_common(met);
    met->add_option("--models", models_path, "CSV of per-model metrics")->required();

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return run_simulate(args);
        if (msh->parsed()) return run_mesh(args);
        if (fit->parsed()) return run_fit(args);
        if (pred->parsed()) return run_predict(args);
        if (cv->parsed()) return run_cv(args, cv_kind, cv_k);
        if (met->parsed()) return run_metrics(args, models_path);
        throw UsageError("no subcommand");
    } catch (const CLI::CallForHelp& e) {
        std::puts(app.help().c_str());
        return 0;
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace stfuse::cli
