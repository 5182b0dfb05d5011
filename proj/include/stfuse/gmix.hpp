#pragma once

#include <span>

namespace stfuse::gmix {

double normal_cdf(double z);

/// CDF of a Gaussian mixture at x.
double mixture_cdf(std::span<const double> w, std::span<const double> mu,
                   std::span<const double> sd, double x);

/// Quantile by bisection on the mixture CDF (absolute tolerance 1e-10).
double mixture_quantile(std::span<const double> w, std::span<const double> mu,
                        std::span<const double> sd, double prob);

/// P(X > c) for the mixture.
double mixture_exceedance(std::span<const double> w, std::span<const double> mu,
                          std::span<const double> sd, double c);

}  // namespace stfuse::gmix
