#pragma once

#include <Eigen/Dense>
#include <functional>

namespace stfuse::detail {

struct OptimResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int evals = 0;
    bool converged = false;
};

/// Derivative-free minimizer: Nelder-Mead cycles interleaved with
/// coordinate-wise golden-section refinement, shrinking scale between
/// restarts. Stops when a full cycle improves the objective by less than
/// `ftol` or the evaluation budget is spent.
OptimResult minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                     const Eigen::VectorXd& x0, double step0, int max_evals,
                     double ftol);

/// Runs fn(i) for i in [0, n) on up to `threads` workers; results must be
/// written to preallocated, disjoint slots so the output is thread-count
/// independent.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace stfuse::detail
