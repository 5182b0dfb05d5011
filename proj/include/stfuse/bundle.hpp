#pragma once

#include <string>

#include "stfuse/model.hpp"

namespace stfuse::bundle {

/// Versioned structured-text fit bundle: spec, mesh (with content hash),
/// standardization, training data, theta grid with per-point latent
/// summaries, mixture summaries, fitted values.
void save_fit(const model::PosteriorFit& fit, const std::string& path);

model::PosteriorFit load_fit(const std::string& path);

}  // namespace stfuse::bundle
