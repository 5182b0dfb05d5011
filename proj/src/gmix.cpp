#include "stfuse/gmix.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stfuse::gmix {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double mixture_cdf(std::span<const double> w, std::span<const double> mu,
                   std::span<const double> sd, double x) {
    double s = 0.0;
    for (std::size_t g = 0; g < w.size(); ++g)
        s += w[g] * (sd[g] > 0 ? normal_cdf((x - mu[g]) / sd[g]) : (x >= mu[g] ? 1.0 : 0.0));
    return s;
}

double mixture_quantile(std::span<const double> w, std::span<const double> mu,
                        std::span<const double> sd, double prob) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t g = 0; g < w.size(); ++g) {
        lo = std::min(lo, mu[g] - 10.0 * sd[g] - 1e-12);
        hi = std::max(hi, mu[g] + 10.0 * sd[g] + 1e-12);
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (hi - lo < 1e-10) break;
        if (mixture_cdf(w, mu, sd, mid) < prob)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double mixture_exceedance(std::span<const double> w, std::span<const double> mu,
                          std::span<const double> sd, double c) {
    double s = 0.0;
    for (std::size_t g = 0; g < w.size(); ++g)
        s += w[g] * (sd[g] > 0 ? normal_cdf((mu[g] - c) / sd[g]) : (mu[g] > c ? 1.0 : 0.0));
    return s;
}

}  // namespace stfuse::gmix
