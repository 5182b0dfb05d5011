#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stfuse/model.hpp"

namespace stfuse::config {

/// INI-style sections of "key = value" pairs; '#' and ';' start comments.
class Ini {
public:
    static Ini parse_file(const std::string& path);
    static Ini parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;
    double get_num(const std::string& section, const std::string& key, double fallback) const;
    long get_int(const std::string& section, const std::string& key, long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct SimulateConfig {
    int n_sites = 40;
    int n_months = 24;
    double domain_w = 30.0, domain_h = 30.0;
    double origin_x = 500.0, origin_y = 150.0;  // keeps km coords out of lon/lat range
    int grid_nx = 6, grid_ny = 6;
    int n_industrial = 0;
    std::vector<std::string> covariates{"pcm", "aqr"};
    model::Hyperparams theta;
    Eigen::VectorXd beta;  // aligned with the model's fixed effects
};

struct RunConfig {
    int spec_version = 1;

    std::string observations_path;
    std::string grid_path;
    std::string output_dir = ".";

    double max_edge_inner = 2.5;
    double max_edge_outer = 4.0;
    double offset = 5.0;
    long max_vertices = 20000;

    model::ModelSpec spec;

    model::FitConfig fit;
    std::uint64_t seed = 1;

    double threshold = 10.0;
    bool emit_pgm = false;

    std::string cv_kind = "temporal";
    int cv_k = 6;

    int n_months = 0;  // 0: infer from data
    bool coords_are_km = false;
    std::map<std::string, double> bg_mapping;  // site_type -> indicator
    bool drop_industrial = true;
    std::optional<std::pair<std::string, std::string>> ndvi_bands;  // (nir, red) columns

    SimulateConfig simulate;

    static RunConfig from_ini(const Ini& ini);
};

/// FNV-1a over the raw config bytes; ties the run manifest to its inputs.
std::uint64_t file_hash(const std::string& path);

}  // namespace stfuse::config
