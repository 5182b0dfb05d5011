#pragma once

#include <memory>

#include "stfuse/config.hpp"
#include "stfuse/model.hpp"

namespace stfuse::simulate {

struct Simulated {
    model::Dataset data;                   // observations + prediction grid
    std::shared_ptr<const mesh::Mesh> msh;
    model::Hyperparams theta_true;
    Eigen::VectorXd beta_true;
    Eigen::VectorXd latent_true;           // the drawn latent vector
    Eigen::VectorXd eta_true;              // latent projections at observations
    std::vector<std::string> site_types;   // per observation row
};

/// Draws a synthetic dataset from the model prior: random sites, iid N(0,1)
/// covariates, latent fields sampled through the sparse factor, fixed effects
/// set to the configured true values, nugget noise added. Deterministic per
/// seed.
Simulated run(const model::ModelSpec& spec, const config::SimulateConfig& cfg,
              const config::RunConfig& mesh_cfg, std::uint64_t seed);

/// Writes observations.csv, grid.csv and truth.txt into out_dir.
void write_outputs(const Simulated& sim, const model::ModelSpec& spec,
                   const std::string& out_dir);

}  // namespace stfuse::simulate
