#pragma once

#include <memory>
#include <string>

#include "stfuse/config.hpp"
#include "stfuse/model.hpp"

namespace stfuse::cli {

/// Subcommand dispatch: simulate | mesh | fit | predict | cv | metrics.
/// Exit codes: 0 ok, 2 usage, 3 data, 4 numerical.
int dispatch(int argc, const char* const* argv);

/// Mesh over the observation sites, domain from the bounding box
/// of sites plus (when present) the prediction grid.
std::shared_ptr<const mesh::Mesh> build_mesh_for(const model::Dataset& data,
                                                 const config::RunConfig& rc);

}  // namespace stfuse::cli
