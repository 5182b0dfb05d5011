#pragma once

#include "stfuse/sparse.hpp"

namespace stfuse::temporal {

enum class Kind { IID, AR1, RW1 };

struct TemporalModel {
    Kind kind = Kind::IID;
    sparse::Index t = 1;   // number of time points
    double sd = 1.0;       // innovation sd
    double phi = 0.0;      // AR1 coefficient, |phi| < 1
};

/// T x T precision. IID: (1/sd^2) I. AR1: (1/sd^2) tridiagonal with diagonal
/// (1, 1+phi^2, ..., 1+phi^2, 1) and off-diagonal -phi. RW1: (1/sd^2)
/// second-difference matrix (rank T-1; sum-to-zero handled at model assembly).
sparse::SparseSymMatrix temporal_precision(const TemporalModel& model);

/// One-parameter PC prior for a correlation with base value 1:
/// pi(phi) = lambda exp(-lambda sqrt(1-phi)) / (2 sqrt(1-phi) (1 - exp(-lambda sqrt(2))))
/// on (-1, 1); calibrate_pc_cor1 solves the tail statement P(phi > phi0) = p
/// (or < for the other direction) for lambda.
double pc_cor1_logdensity(double phi, double lambda);
double calibrate_pc_cor1(double phi0, double p, bool tail_greater);

}  // namespace stfuse::temporal
