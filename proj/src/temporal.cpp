#include "stfuse/temporal.hpp"

#include <cmath>

namespace stfuse::temporal {

sparse::SparseSymMatrix temporal_precision(const TemporalModel& model) {
    const auto t = model.t;
    if (t < 1) throw UsageError("temporal_precision: T must be >= 1");
    if (model.sd <= 0) throw UsageError("temporal_precision: sd must be > 0");
    const double prec = 1.0 / (model.sd * model.sd);
    std::vector<sparse::Entry> e;

    switch (model.kind) {
        case Kind::IID:
            for (sparse::Index i = 0; i < t; ++i) e.push_back({i, i, prec});
            break;
        case Kind::AR1: {
            const double phi = model.phi;
            if (!(std::abs(phi) < 1.0))
                throw NumericalError("InvalidPhi: AR1 needs |phi| < 1");
            for (sparse::Index i = 0; i < t; ++i) {
                const bool endpoint = (i == 0 || i == t - 1);
                e.push_back({i, i, prec * (endpoint ? 1.0 : 1.0 + phi * phi)});
                if (i > 0) e.push_back({i, i - 1, -prec * phi});
            }
            break;
        }
        case Kind::RW1:
            // second differences: D^T D with D the (T-1) x T first-difference map
            for (sparse::Index i = 0; i < t; ++i) {
                double d = 0.0;
                if (i > 0) d += 1.0;
                if (i < t - 1) d += 1.0;
                if (d > 0) e.push_back({i, i, prec * d});
                if (i > 0) e.push_back({i, i - 1, -prec});
            }
            break;
    }
    return sparse::SparseSymMatrix::from_triplets(t, e);
}

double pc_cor1_logdensity(double phi, double lambda) {
    if (!(phi > -1.0 && phi < 1.0))
        throw NumericalError("InvalidPhi: correlation must be in (-1, 1)");
    const double d = std::sqrt(1.0 - phi);
    const double norm = 1.0 - std::exp(-lambda * std::sqrt(2.0));
    return std::log(lambda) - lambda * d - std::log(2.0 * d) - std::log(norm);
}

double calibrate_pc_cor1(double phi0, double p, bool tail_greater) {
    // phi > phi0 <=> d < d0 with d = sqrt(1-phi), so
    // P(phi > phi0) = (1 - exp(-l d0)) / (1 - exp(-l sqrt(2))),
    // increasing in l from d0/sqrt(2) to 1.
    const double d0 = std::sqrt(1.0 - phi0);
    const double target = tail_greater ? p : 1.0 - p;
    if (target <= d0 / std::sqrt(2.0) || target >= 1.0)
        throw UsageError("calibrate_pc_cor1: tail statement unattainable");
    auto mass_above = [&](double l) {
        return std::expm1(-l * d0) / std::expm1(-l * std::sqrt(2.0));
    };
    double lo = 1e-10, hi = 1.0;
    while (mass_above(hi) < target && hi < 1e8) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass_above(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace stfuse::temporal
