#pragma once

#include <string>
#include <vector>

#include "stfuse/config.hpp"
#include "stfuse/model.hpp"

namespace stfuse::ingest {

/// Normalised difference vegetation index (NIR - Red)/(NIR + Red) in [-1, 1].
double ndvi(double nir, double red);

struct IngestReport {
    int n_observations = 0;
    int n_industrial_dropped = 0;
    std::vector<std::string> warnings;
};

/// Reads observation (and, when configured, grid) CSVs into a Dataset:
/// y = ln(pm25), bg derived from site_type, covariates left on the raw scale
/// (fit() standardizes). Throws DataError with the offending line on parse
/// problems, nonpositive concentrations, or unknown site types.
model::Dataset ingest(const config::RunConfig& rc, IngestReport* report = nullptr);

/// Fills d.grid_rows/grid_covariates from the configured grid CSV;
/// d.covariate_names must already be set (bg defaults to 1 on grid cells).
void read_grid(const config::RunConfig& rc, model::Dataset& d);

/// Parses one CSV file into header + rows (no quoting; plain comma split).
struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    static Csv read_file(const std::string& path);
    long column(const std::string& name) const;  // -1 when missing
};

/// Writes the dataset back out in the ingestion format (round-trip support).
void write_observations_csv(const model::Dataset& data,
                            const std::vector<std::string>& site_types,
                            const std::string& path);

}  // namespace stfuse::ingest
