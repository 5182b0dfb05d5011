#pragma once

#include <span>
#include <string>
#include <vector>

#include "stfuse/model.hpp"

namespace stfuse::eval {

/// Squared Pearson correlation between observed and fitted values.
double r_squared(std::span<const double> y, std::span<const double> y_hat);

/// Predictive model choice criterion: sum of squared residuals plus summed
/// predictive variances.
double pmcc(std::span<const double> y, std::span<const double> y_hat,
            std::span<const double> var_hat);

struct PredictiveMetrics {
    double r2 = 0.0;
    double rmse = 0.0;
    double bias = 0.0;  // mean of observed - predicted
    double cov = 0.0;   // fraction inside [q025, q975]
};

PredictiveMetrics predictive_metrics(std::span<const double> y,
                                     std::span<const double> y_star_mean,
                                     std::span<const double> y_star_q025,
                                     std::span<const double> y_star_q975);

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct FoldPlan {
    enum class Kind { TemporalKfold, SpatialKblock };
    Kind kind = Kind::TemporalKfold;
    int k = 6;
    std::vector<int> assignment;      // per observation -> fold id
    std::vector<std::string> labels;  // per fold
};

/// k equal consecutive time periods; the fold of an observation depends only
/// on its month.
FoldPlan temporal_kfold(const model::Dataset& data, int k);

/// 2 x 3 spatial blocks with near-equal site counts, labeled
/// NW, N, NE (northern row) and SW, S, SE (southern row). Requires k = 6.
FoldPlan spatial_kblock(const model::Dataset& data, int k);

struct FoldMetrics {
    int fold = 0;
    std::string label;
    PredictiveMetrics metrics;
    int n_test = 0;
};

struct CvResult {
    std::vector<FoldMetrics> folds;
    PredictiveMetrics pooled;
    int n_total = 0;
};

CvResult cross_validate(const model::ModelSpec& spec, const model::Dataset& data,
                        std::shared_ptr<const mesh::Mesh> msh, const FoldPlan& plan,
                        const model::FitConfig& config);

/// fold,label,r2,rmse,bias,cov rows plus a pooled row.
void write_cv_csv(const CvResult& cv, const std::string& path);

// ---------------------------------------------------------------------------
// Radar table (model comparison summary, 0-100% rescaled)
// ---------------------------------------------------------------------------

struct ModelMetricsRow {
    std::string model;
    double r2 = 0.0, pmcc = 0.0, rmse = 0.0, bias = 0.0, cov = 0.0;
};

struct RadarRow {
    std::string model;
    double r2_pct = 0.0, pmcc_pct = 0.0, rmse_pct = 0.0, bias_pct = 0.0, cov_pct = 0.0;
    double area = 0.0;  // radar polygon area, radii = pct/100
};

/// 100% is the optimal value per metric (highest r2; lowest pmcc/rmse;
/// |bias| nearest 0; coverage nearest 0.95); 0% anchors at the worst value
/// among the compared models.
std::vector<RadarRow> radar_table(std::span<const ModelMetricsRow> rows);

void write_radar_csv(std::span<const RadarRow> rows, const std::string& path);

}  // namespace stfuse::eval
