#pragma once

#include <string>
#include <vector>

#include "stfuse/model.hpp"

namespace stfuse::predict {

struct PointPrediction {
    double mean_log = 0.0;
    double sd_log = 0.0;
    double q025 = 0.0, q50 = 0.0, q975 = 0.0;  // log scale
    double exc_prob = 0.0;
    bool inside = true;
};

struct CellPrediction : PointPrediction {
    std::string cell_id;
    double x = 0.0, y = 0.0;
    int month = 1;
};

struct PredictionSet {
    std::vector<CellPrediction> cells;
    double threshold = 10.0;  // concentration units
};

/// Reusable posterior machinery: one factorization per theta-grid point.
class Predictor {
public:
    explicit Predictor(const model::PosteriorFit& fit, int threads = 1);

    /// Predictive mixture at arbitrary points. `cov` rows are raw covariates
    /// aligned with cov_names; standardization is applied internally.
    std::vector<PointPrediction> at(std::span<const model::DesignRequest> pts,
                                    const std::vector<std::string>& cov_names,
                                    const Eigen::MatrixXd& cov, double threshold) const;

    const model::PosteriorFit& fit() const { return *fit_; }

private:
    const model::PosteriorFit* fit_;
    std::vector<sparse::CholeskyFactor> factors_;  // per grid point
    int threads_ = 1;

    friend Eigen::MatrixXd sample_predictive(const model::PosteriorFit& fit,
                                             const model::Dataset& grid, int n_samples,
                                             std::uint64_t seed);
};

/// Posterior predictive distribution on the grid rows of `grid` (raw-scale
/// covariates). Cells outside the mesh are flagged, not silently dropped;
/// throws CellOutsideMesh only when no requested cell lies inside.
PredictionSet predict(const model::PosteriorFit& fit, const model::Dataset& grid,
                      double threshold, int threads = 1);

/// Joint predictive samples at the grid rows: (n_rows x n_samples), grid
/// point drawn per sample proportional to its weight, latent drawn through
/// the sparse factor, nugget noise added. Deterministic per seed.
Eigen::MatrixXd sample_predictive(const model::PosteriorFit& fit,
                                  const model::Dataset& grid, int n_samples,
                                  std::uint64_t seed);

/// cell_id,x_km,y_km,month,mean_log,sd_log,mean_conc,median_conc,q025,q975,exc_prob
void write_csv(const PredictionSet& ps, const std::string& path);

/// Quick-look P2 graymap of mean concentration for one month, scaled to the
/// data range; requires the month's cells to form a regular grid.
void write_pgm(const PredictionSet& ps, int month, const std::string& path);

}  // namespace stfuse::predict
