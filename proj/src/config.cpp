#include "stfuse/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace stfuse::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

spde::Tail tail_of(const std::string& s) {
    if (s == "greater") return spde::Tail::Greater;
    if (s == "less") return spde::Tail::Less;
    throw UsageError("tail direction must be 'greater' or 'less', got '" + s + "'");
}

}  // namespace

Ini Ini::parse_string(const std::string& text) {
    Ini ini;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw UsageError("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        ini.sections_[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return ini;
}

Ini Ini::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

bool Ini::has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
}

std::string Ini::get(const std::string& section, const std::string& key,
                     const std::string& fallback) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

double Ini::get_num(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw UsageError("config [" + section + "] " + key + ": not a number");
    return x;
}

long Ini::get_int(const std::string& section, const std::string& key, long fallback) const {
    if (!has(section, key)) return fallback;
    return static_cast<long>(get_num(section, key, 0));
}

bool Ini::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("config [" + section + "] " + key + ": not a boolean");
}

std::vector<std::string> Ini::get_list(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    const std::string v = get(section, key, "");
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

RunConfig RunConfig::from_ini(const Ini& ini) {
    RunConfig rc;
    rc.spec_version = static_cast<int>(ini.get_int("", "spec_version", 1));
    if (rc.spec_version != 1)
        throw UsageError("unsupported spec_version " + std::to_string(rc.spec_version));

    rc.observations_path = ini.get("paths", "observations", "");
    rc.grid_path = ini.get("paths", "grid", "");
    rc.output_dir = ini.get("paths", "output_dir", ".");

    rc.max_edge_inner = ini.get_num("mesh", "max_edge_inner", 2.5);
    rc.max_edge_outer = ini.get_num("mesh", "max_edge_outer", 4.0);
    rc.offset = ini.get_num("mesh", "offset", 5.0);
    rc.max_vertices = ini.get_int("mesh", "max_vertices", 20000);

    // model terms
    auto& spec = rc.spec;
    spec.fixed_effects = ini.get_list("model", "fixed");
    if (spec.fixed_effects.empty()) spec.fixed_effects = {"intercept", "bg", "pcm", "aqr"};
    spec.fixed_prior_variance = ini.get_num("model", "fixed_prior_variance", 1000.0);
    spec.nugget_sd0 = ini.get_num("priors", "nugget_sd0", 1.0);
    spec.nugget_p = ini.get_num("priors", "nugget_p", 0.1);
    spec.nugget_tail = tail_of(ini.get("priors", "nugget_tail", "greater"));

    spde::PcPrior st_prior;
    st_prior.rho0 = ini.get_num("priors", "st_range0", 20.0);
    st_prior.p_rho = ini.get_num("priors", "st_range_p", 0.01);
    st_prior.rho_tail = tail_of(ini.get("priors", "st_range_tail", "greater"));
    st_prior.sigma0 = ini.get_num("priors", "st_sd0", 0.1);
    st_prior.p_sigma = ini.get_num("priors", "st_sd_p", 0.1);
    st_prior.sigma_tail = tail_of(ini.get("priors", "st_sd_tail", "greater"));

    if (ini.get_bool("model", "st_field", true)) {
        model::StFieldTerm st;
        st.prior = st_prior;
        st.a0 = ini.get_num("priors", "st_ar0", 0.95);
        st.a_p = ini.get_num("priors", "st_ar_p", 0.5);
        st.a_tail_greater = ini.get("priors", "st_ar_tail", "greater") == "greater";
        spec.st_field = st;
    }

    spde::PcPrior svc_prior;
    svc_prior.rho0 = ini.get_num("priors", "svc_range0", 20.0);
    svc_prior.p_rho = ini.get_num("priors", "svc_range_p", 0.01);
    svc_prior.rho_tail = tail_of(ini.get("priors", "svc_range_tail", "greater"));
    svc_prior.sigma0 = ini.get_num("priors", "svc_sd0", 0.1);
    svc_prior.p_sigma = ini.get_num("priors", "svc_sd_p", 0.1);
    svc_prior.sigma_tail = tail_of(ini.get("priors", "svc_sd_tail", "greater"));
    for (const auto& name : ini.get_list("model", "svc"))
        spec.svc_terms.push_back({name, svc_prior});

    for (const auto& item : ini.get_list("model", "tvc")) {
        model::TvcTerm term;
        const auto colon = item.find(':');
        term.covariate = colon == std::string::npos ? item : item.substr(0, colon);
        const std::string kind = colon == std::string::npos ? "ar1" : item.substr(colon + 1);
        if (kind == "iid")
            term.kind = temporal::Kind::IID;
        else if (kind == "ar1")
            term.kind = temporal::Kind::AR1;
        else if (kind == "rw1")
            term.kind = temporal::Kind::RW1;
        else
            throw UsageError("tvc kind must be iid|ar1|rw1, got '" + kind + "'");
        term.sd0 = ini.get_num("priors", "tvc_sd0", 1.0);
        term.sd_p = ini.get_num("priors", "tvc_sd_p", 0.1);
        term.sd_tail = tail_of(ini.get("priors", "tvc_sd_tail", "greater"));
        term.phi0 = ini.get_num("priors", "tvc_ar0", 0.95);
        term.phi_p = ini.get_num("priors", "tvc_ar_p", 0.5);
        term.phi_tail_greater = ini.get("priors", "tvc_ar_tail", "greater") == "greater";
        spec.tvc_terms.push_back(term);
    }

    rc.fit.max_evals = static_cast<int>(ini.get_int("fit", "max_evals", 500));
    rc.fit.tol = ini.get_num("fit", "tol", 1e-6);
    const std::string grid_style = ini.get("fit", "grid", "ccd");
    if (grid_style == "ccd")
        rc.fit.grid_style = model::FitConfig::GridStyle::Ccd;
    else if (grid_style == "mode")
        rc.fit.grid_style = model::FitConfig::GridStyle::ModeOnly;
    else
        throw UsageError("fit grid must be ccd|mode");
    rc.fit.grid_step = ini.get_num("fit", "grid_step", 1.2);
    rc.fit.fix_hyperparams = ini.get_bool("fit", "fix_hyperparams", false);
    rc.seed = static_cast<std::uint64_t>(ini.get_int("fit", "seed", 1));
    rc.fit.threads = static_cast<int>(ini.get_int("fit", "threads", 1));

    // optional explicit initial / fixed hyperparameter values
    if (ini.has("fit", "init_nugget_var")) {
        model::Hyperparams init;
        init.nugget_var = ini.get_num("fit", "init_nugget_var", 0.1);
        init.st_range = ini.get_num("fit", "init_st_range", 10.0);
        init.st_sd = ini.get_num("fit", "init_st_sd", 1.0);
        init.st_a = ini.get_num("fit", "init_st_a", 0.9);
        for (std::size_t k = 0; k < spec.svc_terms.size(); ++k)
            init.svc.emplace_back(
                ini.get_num("fit", "init_svc_range", 10.0),
                ini.get_num("fit", "init_svc_sd", 0.5));
        for (std::size_t k = 0; k < spec.tvc_terms.size(); ++k)
            init.tvc.push_back({ini.get_num("fit", "init_tvc_sd", 0.5),
                                ini.get_num("fit", "init_tvc_phi", 0.9)});
        rc.fit.init = init;
    }

    rc.threshold = ini.get_num("predict", "threshold", 10.0);
    rc.emit_pgm = ini.get_bool("predict", "pgm", false);

    rc.cv_kind = ini.get("cv", "kind", "temporal");
    rc.cv_k = static_cast<int>(ini.get_int("cv", "k", 6));

    rc.n_months = static_cast<int>(ini.get_int("ingest", "n_months", 0));
    rc.coords_are_km = ini.get_bool("ingest", "coords_are_km", false);
    rc.drop_industrial = ini.get_bool("ingest", "drop_industrial", true);
    rc.bg_mapping = {{"urban_background", 1.0},
                     {"suburban_background", 1.0},
                     {"traffic", 0.0},
                     {"industrial", 0.0}};
    for (const auto& [k, v] : rc.bg_mapping) {
        const std::string key = "bg_" + k;
        if (ini.has("ingest", key)) rc.bg_mapping[k] = ini.get_num("ingest", key, v);
    }
    if (ini.has("ingest", "ndvi_nir") != ini.has("ingest", "ndvi_red"))
        throw UsageError("ndvi needs both ndvi_nir and ndvi_red columns");
    if (ini.has("ingest", "ndvi_nir"))
        rc.ndvi_bands = {ini.get("ingest", "ndvi_nir", ""), ini.get("ingest", "ndvi_red", "")};

    auto& sim = rc.simulate;
    sim.n_sites = static_cast<int>(ini.get_int("simulate", "n_sites", 40));
    sim.n_months = static_cast<int>(ini.get_int("simulate", "n_months", 24));
    sim.domain_w = ini.get_num("simulate", "domain_w", 30.0);
    sim.domain_h = ini.get_num("simulate", "domain_h", 30.0);
    sim.origin_x = ini.get_num("simulate", "origin_x", 500.0);
    sim.origin_y = ini.get_num("simulate", "origin_y", 150.0);
    sim.grid_nx = static_cast<int>(ini.get_int("simulate", "grid_nx", 6));
    sim.grid_ny = static_cast<int>(ini.get_int("simulate", "grid_ny", 6));
    sim.n_industrial = static_cast<int>(ini.get_int("simulate", "n_industrial", 0));
    if (ini.has("simulate", "covariates")) sim.covariates = ini.get_list("simulate", "covariates");
    sim.theta.nugget_var = ini.get_num("simulate", "true_nugget_var", 0.018);
    sim.theta.st_range = ini.get_num("simulate", "true_st_range", 6.38);
    sim.theta.st_sd = ini.get_num("simulate", "true_st_sd", 0.5);
    sim.theta.st_a = ini.get_num("simulate", "true_st_a", 0.95);
    for (std::size_t k = 0; k < spec.svc_terms.size(); ++k)
        sim.theta.svc.emplace_back(ini.get_num("simulate", "true_svc_range", 15.0),
                                   ini.get_num("simulate", "true_svc_sd", 0.4));
    for (std::size_t k = 0; k < spec.tvc_terms.size(); ++k)
        sim.theta.tvc.push_back({ini.get_num("simulate", "true_tvc_sd", 0.8),
                                 ini.get_num("simulate", "true_tvc_phi", 0.99)});
    const auto beta_list = ini.get_list("simulate", "true_beta");
    sim.beta.resize(static_cast<long>(spec.fixed_effects.size()));
    for (long j = 0; j < sim.beta.size(); ++j)
        sim.beta[j] = j < static_cast<long>(beta_list.size())
                          ? std::stod(beta_list[static_cast<std::size_t>(j)])
                          : (j == 0 ? 2.6 : 0.25);
    return rc;
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot read " + path);
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace stfuse::config
