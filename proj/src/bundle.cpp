#include "stfuse/bundle.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace stfuse::bundle {

namespace {

constexpr const char* kMagic = "stfuse_fit 1";

void put(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

void put_vec(std::ostream& os, const Eigen::VectorXd& v) {
    os << v.size();
    for (long i = 0; i < v.size(); ++i) {
        os << " ";
        put(os, v[i]);
    }
    os << "\n";
}

Eigen::VectorXd read_vec(std::istream& is) {
    long n = 0;
    is >> n;
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) is >> v[i];
    return v;
}

std::string tail_str(spde::Tail t) { return t == spde::Tail::Greater ? "greater" : "less"; }
spde::Tail tail_parse(const std::string& s) {
    return s == "greater" ? spde::Tail::Greater : spde::Tail::Less;
}

void write_pc_prior(std::ostream& os, const spde::PcPrior& p) {
    put(os, p.rho0);
    os << " ";
    put(os, p.p_rho);
    os << " " << tail_str(p.rho_tail) << " ";
    put(os, p.sigma0);
    os << " ";
    put(os, p.p_sigma);
    os << " " << tail_str(p.sigma_tail) << "\n";
}

spde::PcPrior read_pc_prior(std::istream& is) {
    spde::PcPrior p;
    std::string t1, t2;
    is >> p.rho0 >> p.p_rho >> t1 >> p.sigma0 >> p.p_sigma >> t2;
    p.rho_tail = tail_parse(t1);
    p.sigma_tail = tail_parse(t2);
    return p;
}

std::string kind_str(temporal::Kind k) {
    switch (k) {
        case temporal::Kind::IID: return "iid";
        case temporal::Kind::AR1: return "ar1";
        case temporal::Kind::RW1: return "rw1";
    }
    return "ar1";
}

temporal::Kind kind_parse(const std::string& s) {
    if (s == "iid") return temporal::Kind::IID;
    if (s == "rw1") return temporal::Kind::RW1;
    return temporal::Kind::AR1;
}

}  // namespace

void save_fit(const model::PosteriorFit& fit, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << kMagic << "\n";

    // spec
    os << "fixed " << fit.spec.fixed_effects.size();
    for (const auto& n : fit.spec.fixed_effects) os << " " << n;
    os << "\n";
    os << "fixed_prior_variance ";
    put(os, fit.spec.fixed_prior_variance);
    os << "\n";
    os << "nugget_prior ";
    put(os, fit.spec.nugget_sd0);
    os << " ";
    put(os, fit.spec.nugget_p);
    os << " " << tail_str(fit.spec.nugget_tail) << "\n";
    os << "st_field " << (fit.spec.st_field ? 1 : 0) << "\n";
    if (fit.spec.st_field) {
        os << "st_prior ";
        write_pc_prior(os, fit.spec.st_field->prior);
        os << "st_ar ";
        put(os, fit.spec.st_field->a0);
        os << " ";
        put(os, fit.spec.st_field->a_p);
        os << " " << (fit.spec.st_field->a_tail_greater ? 1 : 0) << "\n";
    }
    os << "svc " << fit.spec.svc_terms.size() << "\n";
    for (const auto& t : fit.spec.svc_terms) {
        os << t.covariate << " ";
        write_pc_prior(os, t.prior);
    }
    os << "tvc " << fit.spec.tvc_terms.size() << "\n";
    for (const auto& t : fit.spec.tvc_terms) {
        os << t.covariate << " " << kind_str(t.kind) << " ";
        put(os, t.sd0);
        os << " ";
        put(os, t.sd_p);
        os << " " << tail_str(t.sd_tail) << " ";
        put(os, t.phi0);
        os << " ";
        put(os, t.phi_p);
        os << " " << (t.phi_tail_greater ? 1 : 0) << "\n";
    }

    // mesh
    const auto& m = *fit.msh;
    os << "mesh_hash " << m.content_hash() << "\n";
    os << "mesh " << m.vertices().size() << " " << m.triangles().size() << " "
       << m.inner_boundary().size() << " " << m.outer_boundary().size() << "\n";
    for (const auto& v : m.vertices()) {
        put(os, v.x);
        os << " ";
        put(os, v.y);
        os << "\n";
    }
    for (const auto& t : m.triangles()) os << t.a << " " << t.b << " " << t.c << "\n";
    for (const auto& p : m.inner_boundary()) {
        put(os, p.x);
        os << " ";
        put(os, p.y);
        os << "\n";
    }
    for (const auto& p : m.outer_boundary()) {
        put(os, p.x);
        os << " ";
        put(os, p.y);
        os << "\n";
    }

    // standardization
    os << "standardization " << fit.standardization.names.size() << "\n";
    for (std::size_t j = 0; j < fit.standardization.names.size(); ++j) {
        os << fit.standardization.names[j] << " ";
        put(os, fit.standardization.mean[static_cast<long>(j)]);
        os << " ";
        put(os, fit.standardization.sd[static_cast<long>(j)]);
        os << "\n";
    }

    // training data
    os << "data " << fit.data.observations.size() << " " << fit.data.covariate_names.size()
       << " " << fit.data.n_months << "\n";
    for (const auto& n : fit.data.covariate_names) os << n << " ";
    os << "\n";
    for (std::size_t i = 0; i < fit.data.observations.size(); ++i) {
        const auto& o = fit.data.observations[i];
        os << o.site_id << " ";
        put(os, o.x);
        os << " ";
        put(os, o.y);
        os << " " << o.t << " ";
        put(os, o.y_log);
        for (long j = 0; j < fit.data.obs_covariates.cols(); ++j) {
            os << " ";
            put(os, fit.data.obs_covariates(static_cast<long>(i), j));
        }
        os << "\n";
    }

    // theta machinery
    os << "theta_names " << fit.theta_names.size();
    for (const auto& n : fit.theta_names) os << " " << n;
    os << "\n";
    os << "theta_mode ";
    put_vec(os, fit.theta_mode_internal);
    os << "theta_sd ";
    put_vec(os, fit.theta_sd_internal);
    os << "grid " << fit.grid.size() << "\n";
    for (const auto& gp : fit.grid) {
        os << "gp ";
        put(os, gp.weight);
        os << " ";
        put(os, gp.objective);
        os << " ";
        put(os, gp.nugget_var);
        os << "\n";
        os << "internal ";
        put_vec(os, gp.internal);
        os << "lmean ";
        put_vec(os, gp.latent_mean);
        os << "lvar ";
        put_vec(os, gp.latent_var);
    }

    os << "latent_mean ";
    put_vec(os, fit.latent_mean);
    os << "latent_sd ";
    put_vec(os, fit.latent_sd);
    os << "fitted_mean ";
    put_vec(os, fit.fitted_mean);
    os << "fitted_var ";
    put_vec(os, fit.fitted_var);

    os << "fixed_summary " << fit.fixed_effects.size() << "\n";
    for (const auto& r : fit.fixed_effects) {
        os << r.name << " ";
        put(os, r.mean);
        os << " ";
        put(os, r.sd);
        os << " ";
        put(os, r.q025);
        os << " ";
        put(os, r.q50);
        os << " ";
        put(os, r.q975);
        os << "\n";
    }
    os << "theta_summary " << fit.theta_summary.size() << "\n";
    for (const auto& r : fit.theta_summary) {
        os << r.name << " ";
        put(os, r.mean);
        os << " ";
        put(os, r.sd);
        os << " ";
        put(os, r.q025);
        os << " ";
        put(os, r.q50);
        os << " ";
        put(os, r.q975);
        os << "\n";
    }
    os << "warnings " << fit.warnings.size() << "\n";
    for (const auto& w : fit.warnings) os << w << "\n";
}

model::PosteriorFit load_fit(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read " + path);
    std::string magic_a, magic_b;
    is >> magic_a >> magic_b;
    if (magic_a + " " + magic_b != kMagic)
        throw DataError("not a fit bundle (bad magic): " + path);

    model::PosteriorFit fit;
    std::string tag;

    is >> tag;  // fixed
    std::size_t n_fixed;
    is >> n_fixed;
    fit.spec.fixed_effects.resize(n_fixed);
    for (auto& n : fit.spec.fixed_effects) is >> n;
    is >> tag >> fit.spec.fixed_prior_variance;
    std::string nt;
    is >> tag >> fit.spec.nugget_sd0 >> fit.spec.nugget_p >> nt;
    fit.spec.nugget_tail = tail_parse(nt);
    int has_st = 0;
    is >> tag >> has_st;
    if (has_st) {
        model::StFieldTerm st;
        is >> tag;
        st.prior = read_pc_prior(is);
        int tg = 0;
        is >> tag >> st.a0 >> st.a_p >> tg;
        st.a_tail_greater = tg != 0;
        fit.spec.st_field = st;
    }
    std::size_t n_svc;
    is >> tag >> n_svc;
    for (std::size_t k = 0; k < n_svc; ++k) {
        model::SvcTerm t;
        is >> t.covariate;
        t.prior = read_pc_prior(is);
        fit.spec.svc_terms.push_back(t);
    }
    std::size_t n_tvc;
    is >> tag >> n_tvc;
    for (std::size_t k = 0; k < n_tvc; ++k) {
        model::TvcTerm t;
        std::string kind, tl;
        int tg = 0;
        is >> t.covariate >> kind >> t.sd0 >> t.sd_p >> tl >> t.phi0 >> t.phi_p >> tg;
        t.kind = kind_parse(kind);
        t.sd_tail = tail_parse(tl);
        t.phi_tail_greater = tg != 0;
        fit.spec.tvc_terms.push_back(t);
    }

    std::uint64_t mesh_hash = 0;
    is >> tag >> mesh_hash;
    std::size_t nv, ntri, nin, nout;
    is >> tag >> nv >> ntri >> nin >> nout;
    std::vector<mesh::Point> verts(nv), inner(nin), outer(nout);
    std::vector<mesh::Triangle> tris(ntri);
    for (auto& v : verts) is >> v.x >> v.y;
    for (auto& t : tris) is >> t.a >> t.b >> t.c;
    for (auto& p : inner) is >> p.x >> p.y;
    for (auto& p : outer) is >> p.x >> p.y;
    auto m = std::make_shared<mesh::Mesh>(
        mesh::Mesh::from_data(std::move(verts), std::move(tris), std::move(inner),
                              std::move(outer)));
    if (m->content_hash() != mesh_hash)
        throw DataError("fit bundle mesh hash mismatch (corrupt bundle?)");
    fit.msh = m;

    std::size_t n_std;
    is >> tag >> n_std;
    fit.standardization.names.resize(n_std);
    fit.standardization.mean.resize(static_cast<long>(n_std));
    fit.standardization.sd.resize(static_cast<long>(n_std));
    for (std::size_t j = 0; j < n_std; ++j)
        is >> fit.standardization.names[j] >> fit.standardization.mean[static_cast<long>(j)] >>
            fit.standardization.sd[static_cast<long>(j)];

    std::size_t n_obs, n_cov;
    is >> tag >> n_obs >> n_cov >> fit.data.n_months;
    fit.data.covariate_names.resize(n_cov);
    for (auto& n : fit.data.covariate_names) is >> n;
    fit.data.observations.resize(n_obs);
    fit.data.obs_covariates.resize(static_cast<long>(n_obs), static_cast<long>(n_cov));
    for (std::size_t i = 0; i < n_obs; ++i) {
        auto& o = fit.data.observations[i];
        is >> o.site_id >> o.x >> o.y >> o.t >> o.y_log;
        for (std::size_t j = 0; j < n_cov; ++j)
            is >> fit.data.obs_covariates(static_cast<long>(i), static_cast<long>(j));
    }

    std::size_t n_theta;
    is >> tag >> n_theta;
    fit.theta_names.resize(n_theta);
    for (auto& n : fit.theta_names) is >> n;
    is >> tag;
    fit.theta_mode_internal = read_vec(is);
    is >> tag;
    fit.theta_sd_internal = read_vec(is);

    std::size_t n_grid;
    is >> tag >> n_grid;
    fit.grid.resize(n_grid);
    for (auto& gp : fit.grid) {
        is >> tag >> gp.weight >> gp.objective >> gp.nugget_var;
        is >> tag;
        gp.internal = read_vec(is);
        is >> tag;
        gp.latent_mean = read_vec(is);
        is >> tag;
        gp.latent_var = read_vec(is);
    }

    is >> tag;
    fit.latent_mean = read_vec(is);
    is >> tag;
    fit.latent_sd = read_vec(is);
    is >> tag;
    fit.fitted_mean = read_vec(is);
    is >> tag;
    fit.fitted_var = read_vec(is);

    std::size_t n_fs;
    is >> tag >> n_fs;
    fit.fixed_effects.resize(n_fs);
    for (auto& r : fit.fixed_effects) is >> r.name >> r.mean >> r.sd >> r.q025 >> r.q50 >> r.q975;
    std::size_t n_ts;
    is >> tag >> n_ts;
    fit.theta_summary.resize(n_ts);
    for (auto& r : fit.theta_summary) is >> r.name >> r.mean >> r.sd >> r.q025 >> r.q50 >> r.q975;
    std::size_t n_warn;
    is >> tag >> n_warn;
    std::getline(is, tag);  // consume eol
    fit.warnings.resize(n_warn);
    for (auto& w : fit.warnings) std::getline(is, w);

    if (!is) throw DataError("truncated fit bundle: " + path);

    // rebuild the layout from the restored spec and mesh
    model::Hyperparams th = fit.theta_at(fit.theta_mode_internal);
    model::Dataset data_std = fit.data;
    data_std.obs_covariates = fit.standardization.apply(fit.data.obs_covariates);
    auto am = model::assemble(fit.spec, data_std, *fit.msh, th);
    fit.layout = am.layout;
    return fit;
}

}  // namespace stfuse::bundle
