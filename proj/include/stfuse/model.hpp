#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stfuse/mesh.hpp"
#include "stfuse/sparse.hpp"
#include "stfuse/spde.hpp"
#include "stfuse/temporal.hpp"

namespace stfuse::model {

using sparse::Index;
using sparse::SpMat;

// ---------------------------------------------------------------------------
// Model specification (one row of the model-comparison table)
// ---------------------------------------------------------------------------

struct SvcTerm {
    std::string covariate;
    spde::PcPrior prior;  // (range, sd) PC prior
};

struct TvcTerm {
    std::string covariate;
    temporal::Kind kind = temporal::Kind::AR1;
    double sd0 = 1.0;  // P(sd >/< sd0) = sd_p
    double sd_p = 0.1;
    spde::Tail sd_tail = spde::Tail::Greater;
    double phi0 = 0.95;  // AR1 only: P(phi >/< phi0) = phi_p
    double phi_p = 0.5;
    bool phi_tail_greater = true;
};

struct StFieldTerm {
    spde::PcPrior prior;
    double a0 = 0.95;  // P(a >/< a0) = a_p
    double a_p = 0.5;
    bool a_tail_greater = true;
};

struct ModelSpec {
    std::vector<std::string> fixed_effects;  // covariate names, incl. "intercept"
    std::vector<SvcTerm> svc_terms;
    std::vector<TvcTerm> tvc_terms;
    std::optional<StFieldTerm> st_field;
    double fixed_prior_variance = 1000.0;
    double nugget_sd0 = 1.0;  // P(sigma_eps >/< sd0) = p
    double nugget_p = 0.1;
    spde::Tail nugget_tail = spde::Tail::Greater;

    /// Throws UsageError when a covariate holds more than one role or no term
    /// is present.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

struct Hyperparams {
    double nugget_var = 0.1;
    double st_range = 10.0, st_sd = 1.0, st_a = 0.9;   // if st_field
    std::vector<std::pair<double, double>> svc;        // (range, sd) per term
    struct Tvc {
        double sd = 1.0;
        double phi = 0.9;  // AR1 only
    };
    std::vector<Tvc> tvc;
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct Observation {
    std::string site_id;
    double x = 0.0, y = 0.0;  // km
    int t = 1;                // month index, 1-based
    double y_log = 0.0;       // log concentration
};

struct GridRow {
    std::string cell_id;
    double x = 0.0, y = 0.0;
    int t = 1;
};

struct Dataset {
    std::vector<Observation> observations;
    std::vector<std::string> covariate_names;  // excludes the implicit intercept
    Eigen::MatrixXd obs_covariates;            // n_obs x n_cov, raw scale
    int n_months = 1;

    std::vector<GridRow> grid_rows;   // prediction side, may be empty
    Eigen::MatrixXd grid_covariates;  // n_grid x n_cov, aligned with names

    Index covariate_index(const std::string& name) const;  // -1 when missing
    void validate() const;  // duplicate (site, t), t range, finite y
};

/// Training-set standardization (mean 0, variance 1); "intercept" is implicit
/// and unscaled. Constant covariates are reported for fail-soft dropping.
struct Standardization {
    std::vector<std::string> names;
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
    std::vector<std::string> constant;  // sd ~ 0, to be dropped

    static Standardization fit(const std::vector<std::string>& names,
                               const Eigen::MatrixXd& raw);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
};

// ---------------------------------------------------------------------------
// Latent layout and assembly
// ---------------------------------------------------------------------------

struct Block {
    enum class Kind { StField, Svc, Tvc, Fixed };
    Kind kind;
    std::string name;
    Index offset = 0;
    Index size = 0;
};

struct LatentLayout {
    std::vector<Block> blocks;
    Index total = 0;
    const Block* find(const std::string& name) const;
};

struct AssembledModel {
    LatentLayout layout;
    sparse::SparseSymMatrix qx;  // prior precision, block-diagonal
    double qx_logdet = 0.0;      // computed blockwise
    SpMat z;                     // n_obs x layout.total design matrix
};

/// Builds the joint latent system for one hyperparameter value. The design
/// matrix does not depend on theta; `qx` does.
AssembledModel assemble(const ModelSpec& spec, const Dataset& data,
                        const mesh::Mesh& msh, const Hyperparams& theta);

struct DesignRequest {
    double x = 0.0, y = 0.0;
    int t = 1;
};

struct DesignRows {
    SpMat z;                   // n_points x layout.total
    std::vector<bool> inside;  // rows for outside-mesh points are empty
};

/// Design rows for arbitrary points (the prediction side of the system).
DesignRows design_rows(const ModelSpec& spec, std::span<const DesignRequest> pts,
                       const std::vector<std::string>& cov_names,
                       const Eigen::MatrixXd& cov, const mesh::Mesh& msh,
                       const LatentLayout& layout);

/// ln p(y | theta) for the Gaussian observation model:
///   1/2 ln|Qx| - 1/2 ln|Qpost| - n/2 ln(2 pi s2) - 1/2 (y'y/s2 - b' Qpost^-1 b)
/// with Qpost = Qx + Z'Z/s2 and b = Z'y/s2.
double gaussian_lml(const sparse::SparseSymMatrix& qx, const SpMat& z,
                    const Eigen::VectorXd& y, double nugget_var);

/// ln p(y | theta) + ln pi(theta): the gaussian term plus all hyperprior
/// log-densities of the model's terms evaluated at theta.
double log_marginal_likelihood(const ModelSpec& spec, const Dataset& data,
                               const mesh::Mesh& msh, const Hyperparams& theta);

double hyperprior_logdensity(const ModelSpec& spec, const Hyperparams& theta);

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct FitConfig {
    int max_evals = 500;
    double tol = 1e-6;
    enum class GridStyle { ModeOnly, Ccd };
    GridStyle grid_style = GridStyle::Ccd;
    double grid_step = 1.0;  // multiplier on the moment-matching radius sqrt(2 dim)
    std::optional<Hyperparams> init;
    bool fix_hyperparams = false;  // skip optimization, use init as-is
    bool require_convergence = false;  // throw NonConvergence at budget exhaustion
    int threads = 1;
    double nugget_floor = 1e-8;
};

struct SummaryRow {
    std::string name;
    double mean = 0, sd = 0, q025 = 0, q50 = 0, q975 = 0;
};

struct ThetaGridPoint {
    Eigen::VectorXd internal;   // internal-scale coordinates
    double weight = 0.0;
    double objective = 0.0;     // lml + hyperprior (+ jacobian) at this point
    Eigen::VectorXd latent_mean;
    Eigen::VectorXd latent_var;
    double nugget_var = 0.0;
};

struct PosteriorFit {
    ModelSpec spec;  // effective spec (constant covariates dropped)
    LatentLayout layout;
    std::shared_ptr<const mesh::Mesh> msh;
    Dataset data;  // training data, raw covariates
    Standardization standardization;

    std::vector<ThetaGridPoint> grid;
    Eigen::VectorXd theta_mode_internal;
    Eigen::VectorXd theta_sd_internal;   // from the Hessian at the mode
    std::vector<std::string> theta_names;

    Eigen::VectorXd latent_mean;  // mixture over the grid
    Eigen::VectorXd latent_sd;
    std::vector<SummaryRow> fixed_effects;
    std::vector<SummaryRow> theta_summary;

    Eigen::VectorXd fitted_mean;  // at observation points
    Eigen::VectorXd fitted_var;   // includes the nugget

    std::vector<std::string> warnings;

    Hyperparams theta_at(const Eigen::VectorXd& internal) const;
    Eigen::VectorXd internal_of(const Hyperparams& theta) const;
};

PosteriorFit fit(const ModelSpec& spec, const Dataset& data,
                 std::shared_ptr<const mesh::Mesh> msh, const FitConfig& config);

struct FittedValue {
    std::string site_id;
    int t = 1;
    double mean = 0.0;
    double var = 0.0;
};

std::vector<FittedValue> fitted_values(const PosteriorFit& fit);

// ---------------------------------------------------------------------------
// Prior sampling (simulation support)
// ---------------------------------------------------------------------------

/// Draws one latent vector from the assembled prior N(0, Qx^-1), block by
/// block, with the fixed-effect block overridden to `beta_true`.
Eigen::VectorXd sample_latent_prior(const ModelSpec& spec, const Dataset& data,
                                    const mesh::Mesh& msh, const Hyperparams& theta,
                                    const Eigen::VectorXd& beta_true, std::uint64_t seed);

}  // namespace stfuse::model
