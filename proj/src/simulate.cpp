#include "stfuse/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "stfuse/ingest.hpp"

namespace stfuse::simulate {

Simulated run(const model::ModelSpec& spec, const config::SimulateConfig& cfg,
              const config::RunConfig& mesh_cfg, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0.0, cfg.domain_w), uy(0.0, cfg.domain_h);
    std::normal_distribution<double> nd;

    Simulated sim;
    sim.theta_true = cfg.theta;
    sim.beta_true = cfg.beta;

    // site locations and types
    std::vector<mesh::Point> sites;
    std::vector<std::string> type_of_site;
    for (int s = 0; s < cfg.n_sites; ++s) {
        sites.push_back({cfg.origin_x + ux(rng), cfg.origin_y + uy(rng)});
        if (s < cfg.n_industrial)
            type_of_site.push_back("industrial");
        else if (s % 2 == 0)
            type_of_site.push_back("urban_background");
        else
            type_of_site.push_back("traffic");
    }

    std::vector<mesh::Point> domain{
        {cfg.origin_x, cfg.origin_y},
        {cfg.origin_x + cfg.domain_w, cfg.origin_y},
        {cfg.origin_x + cfg.domain_w, cfg.origin_y + cfg.domain_h},
        {cfg.origin_x, cfg.origin_y + cfg.domain_h}};
    sim.msh = std::make_shared<mesh::Mesh>(
        mesh::build_mesh(sites, domain, mesh_cfg.max_edge_inner, mesh_cfg.max_edge_outer,
                         mesh_cfg.offset, mesh_cfg.max_vertices));

    // dataset skeleton: all (site, month) pairs observed
    model::Dataset& d = sim.data;
    d.n_months = cfg.n_months;
    for (const auto& name : cfg.covariates)
        d.covariate_names.push_back(name);
    const bool wants_bg = [&] {
        for (const auto& n : spec.fixed_effects)
            if (n == "bg") return true;
        return false;
    }();
    if (wants_bg) d.covariate_names.push_back("bg");

    const int n_obs = cfg.n_sites * cfg.n_months;
    d.obs_covariates.resize(n_obs, static_cast<long>(d.covariate_names.size()));
    int row = 0;
    for (int s = 0; s < cfg.n_sites; ++s) {
        for (int t = 1; t <= cfg.n_months; ++t) {
            model::Observation o;
            o.site_id = "s" + std::to_string(s);
            o.x = sites[static_cast<std::size_t>(s)].x;
            o.y = sites[static_cast<std::size_t>(s)].y;
            o.t = t;
            d.observations.push_back(o);
            sim.site_types.push_back(type_of_site[static_cast<std::size_t>(s)]);
            for (std::size_t j = 0; j < cfg.covariates.size(); ++j)
                d.obs_covariates(row, static_cast<long>(j)) = nd(rng);
            if (wants_bg)
                d.obs_covariates(row, static_cast<long>(d.covariate_names.size()) - 1) =
                    type_of_site[static_cast<std::size_t>(s)] == "traffic" ? 0.0 : 1.0;
            ++row;
        }
    }

    // latent draw and observation noise
    model::Hyperparams theta_sampling = cfg.theta;
    if (theta_sampling.nugget_var <= 0) theta_sampling.nugget_var = 1.0;  // unused by the prior
    sim.latent_true = model::sample_latent_prior(
        spec, d, *sim.msh, theta_sampling, cfg.beta, rng());

    auto layout_probe = model::assemble(spec, d, *sim.msh, theta_sampling);
    sim.eta_true = layout_probe.z * sim.latent_true;
    const double nugget_sd = cfg.theta.nugget_var > 0 ? std::sqrt(cfg.theta.nugget_var) : 0.0;
    for (int i = 0; i < n_obs; ++i)
        d.observations[static_cast<std::size_t>(i)].y_log = sim.eta_true[i] + nugget_sd * nd(rng);

    // prediction grid with its own covariate draws
    for (int t = 1; t <= cfg.n_months; ++t)
        for (int iy = 0; iy < cfg.grid_ny; ++iy)
            for (int ix = 0; ix < cfg.grid_nx; ++ix) {
                model::GridRow r;
                r.cell_id = "c" + std::to_string(ix) + "_" + std::to_string(iy);
                r.x = cfg.origin_x + cfg.domain_w * (ix + 0.5) / cfg.grid_nx;
                r.y = cfg.origin_y + cfg.domain_h * (iy + 0.5) / cfg.grid_ny;
                r.t = t;
                d.grid_rows.push_back(r);
            }
    d.grid_covariates.resize(static_cast<long>(d.grid_rows.size()),
                             static_cast<long>(d.covariate_names.size()));
    for (long i = 0; i < d.grid_covariates.rows(); ++i) {
        for (std::size_t j = 0; j < cfg.covariates.size(); ++j)
            d.grid_covariates(i, static_cast<long>(j)) = nd(rng);
        if (wants_bg)
            d.grid_covariates(i, static_cast<long>(d.covariate_names.size()) - 1) = 1.0;
    }
    return sim;
}

void write_outputs(const Simulated& sim, const model::ModelSpec& spec,
                   const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    ingest::write_observations_csv(sim.data, sim.site_types, out_dir + "/observations.csv");

    std::ofstream g(out_dir + "/grid.csv");
    if (!g) throw DataError("cannot write grid.csv");
    g << "cell_id,x_km,y_km,month";
    for (const auto& n : sim.data.covariate_names)
        if (n != "bg") g << "," << n;
    g << "\n";
    char buf[64];
    for (std::size_t i = 0; i < sim.data.grid_rows.size(); ++i) {
        const auto& r = sim.data.grid_rows[i];
        g << r.cell_id << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", r.x);
        g << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", r.y);
        g << buf << "," << r.t;
        for (std::size_t j = 0; j < sim.data.covariate_names.size(); ++j) {
            if (sim.data.covariate_names[j] == "bg") continue;
            std::snprintf(buf, sizeof(buf), "%.17g",
                          sim.data.grid_covariates(static_cast<long>(i), static_cast<long>(j)));
            g << "," << buf;
        }
        g << "\n";
    }

    std::ofstream t(out_dir + "/truth.txt");
    t << "nugget_var = " << sim.theta_true.nugget_var << "\n";
    if (spec.st_field) {
        t << "st_range = " << sim.theta_true.st_range << "\n";
        t << "st_sd = " << sim.theta_true.st_sd << "\n";
        t << "st_a = " << sim.theta_true.st_a << "\n";
    }
    for (std::size_t k = 0; k < sim.theta_true.svc.size(); ++k)
        t << "svc_" << spec.svc_terms[k].covariate << " = " << sim.theta_true.svc[k].first
          << " " << sim.theta_true.svc[k].second << "\n";
    for (std::size_t k = 0; k < sim.theta_true.tvc.size(); ++k)
        t << "tvc_" << spec.tvc_terms[k].covariate << " = " << sim.theta_true.tvc[k].sd << " "
          << sim.theta_true.tvc[k].phi << "\n";
    t << "beta =";
    for (long j = 0; j < sim.beta_true.size(); ++j) t << " " << sim.beta_true[j];
    t << "\n";
}

}  // namespace stfuse::simulate
