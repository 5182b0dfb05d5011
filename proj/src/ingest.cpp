#include "stfuse/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
namespace stfuse::ingest {

double ndvi(double nir, double red) {
    if (nir < 0 || red < 0) throw DataError("ndvi: reflectances must be >= 0");
    const double denom = nir + red;
    if (denom == 0.0) throw DataError("ZeroDenominator in ndvi");
    return (nir - red) / denom;
}

Csv Csv::read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path);
    Csv csv;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream is(line);
        std::string field;
        while (std::getline(is, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (first) {
            csv.header = fields;
            first = false;
        } else {
            csv.rows.push_back(fields);
        }
    }
    if (csv.header.empty()) throw DataError("empty CSV: " + path);
    return csv;
}

long Csv::column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return static_cast<long>(j);
    return -1;
}

namespace {

const std::set<std::string> kSiteTypes{"urban_background", "suburban_background",
                                       "industrial", "traffic"};

double parse_num(const std::string& s, const std::string& what, int line) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("ParseError(line " + std::to_string(line) + "): bad " + what + " '" +
                        s + "'");
    }
}

/// Which raw CSV columns the model needs (everything referenced by a term,
/// minus the derived ones).
std::vector<std::string> needed_covariates(const model::ModelSpec& spec,
                                           const config::RunConfig& rc) {
    std::set<std::string> names;
    for (const auto& n : spec.fixed_effects) names.insert(n);
    for (const auto& t : spec.svc_terms) names.insert(t.covariate);
    for (const auto& t : spec.tvc_terms) names.insert(t.covariate);
    names.erase("intercept");
    names.erase("bg");  // derived from site_type
    if (rc.ndvi_bands) names.erase("ndvi");
    return {names.begin(), names.end()};
}

}  // namespace

model::Dataset ingest(const config::RunConfig& rc, IngestReport* report) {
    IngestReport rep;
    auto csv = Csv::read_file(rc.observations_path);

    for (const char* col : {"site_id", "site_type", "x_km", "y_km", "month", "pm25"})
        if (csv.column(col) < 0)
            throw DataError("observations CSV misses required column '" + std::string(col) + "'");

    const auto cov_cols = needed_covariates(rc.spec, rc);
    for (const auto& name : cov_cols)
        if (csv.column(name) < 0)
            throw DataError("observations CSV misses covariate column '" + name + "'");

    const bool wants_bg = [&] {
        for (const auto& n : rc.spec.fixed_effects)
            if (n == "bg") return true;
        for (const auto& t : rc.spec.svc_terms)
            if (t.covariate == "bg") return true;
        for (const auto& t : rc.spec.tvc_terms)
            if (t.covariate == "bg") return true;
        return false;
    }();

    model::Dataset d;
    d.covariate_names = cov_cols;
    if (rc.ndvi_bands) d.covariate_names.push_back("ndvi");
    if (wants_bg) d.covariate_names.push_back("bg");

    const long c_site = csv.column("site_id"), c_type = csv.column("site_type");
    const long c_x = csv.column("x_km"), c_y = csv.column("y_km");
    const long c_month = csv.column("month"), c_pm = csv.column("pm25");

    std::vector<std::vector<double>> cov_rows;
    int lineno = 1;
    int max_month = 0;
    bool any_km_looking = false;
    for (const auto& row : csv.rows) {
        ++lineno;
        if (row.size() != csv.header.size())
            throw DataError("ParseError(line " + std::to_string(lineno) + "): field count");
        const std::string site_type = row[static_cast<std::size_t>(c_type)];
        if (!kSiteTypes.count(site_type))
            throw DataError("UnknownSiteType(line " + std::to_string(lineno) + "): '" +
                            site_type + "'");
        if (site_type == "industrial" && rc.drop_industrial) {
            ++rep.n_industrial_dropped;
            continue;
        }
        model::Observation o;
        o.site_id = row[static_cast<std::size_t>(c_site)];
        o.x = parse_num(row[static_cast<std::size_t>(c_x)], "x_km", lineno);
        o.y = parse_num(row[static_cast<std::size_t>(c_y)], "y_km", lineno);
        o.t = static_cast<int>(parse_num(row[static_cast<std::size_t>(c_month)], "month", lineno));
        const double pm = parse_num(row[static_cast<std::size_t>(c_pm)], "pm25", lineno);
        if (pm <= 0.0)
            throw DataError("NegativeConcentration(line " + std::to_string(lineno) +
                            "): pm25 = " + std::to_string(pm));
        o.y_log = std::log(pm);
        if (o.t < 1)
            throw DataError("ParseError(line " + std::to_string(lineno) + "): month < 1");
        max_month = std::max(max_month, o.t);
        if (std::abs(o.x) > 180.0 || std::abs(o.y) > 90.0) any_km_looking = true;

        std::vector<double> cov;
        cov.reserve(d.covariate_names.size());
        for (const auto& name : cov_cols)
            cov.push_back(parse_num(row[static_cast<std::size_t>(csv.column(name))], name, lineno));
        if (rc.ndvi_bands) {
            const long c_nir = csv.column(rc.ndvi_bands->first);
            const long c_red = csv.column(rc.ndvi_bands->second);
            if (c_nir < 0 || c_red < 0)
                throw DataError("observations CSV misses NDVI band columns");
            cov.push_back(ndvi(parse_num(row[static_cast<std::size_t>(c_nir)], "nir", lineno),
                               parse_num(row[static_cast<std::size_t>(c_red)], "red", lineno)));
        }
        if (wants_bg) cov.push_back(rc.bg_mapping.at(site_type));

        d.observations.push_back(o);
        cov_rows.push_back(std::move(cov));
    }
    if (d.observations.empty()) throw DataError("no usable observations after ingestion");
    if (!any_km_looking && !rc.coords_are_km)
        throw DataError(
            "coordinates look like lon/lat (|x| <= 180, |y| <= 90 everywhere); the engine "
            "expects planar km. Set [ingest] coords_are_km = true if they really are km.");

    d.n_months = rc.n_months > 0 ? rc.n_months : max_month;
    for (const auto& o : d.observations)
        if (o.t > d.n_months)
            throw DataError("month " + std::to_string(o.t) + " outside configured range");

    d.obs_covariates.resize(static_cast<long>(cov_rows.size()),
                            static_cast<long>(d.covariate_names.size()));
    for (std::size_t i = 0; i < cov_rows.size(); ++i)
        for (std::size_t j = 0; j < cov_rows[i].size(); ++j)
            d.obs_covariates(static_cast<long>(i), static_cast<long>(j)) = cov_rows[i][j];

    if (!rc.grid_path.empty()) read_grid(rc, d);

    d.validate();
    rep.n_observations = static_cast<int>(d.observations.size());
    if (rep.n_industrial_dropped > 0)
        rep.warnings.push_back(std::to_string(rep.n_industrial_dropped) +
                               " industrial site rows excluded");
    if (report) *report = rep;
    return d;
}

void read_grid(const config::RunConfig& rc, model::Dataset& d) {
    auto g = Csv::read_file(rc.grid_path);
    for (const char* col : {"cell_id", "x_km", "y_km", "month"})
        if (g.column(col) < 0)
            throw DataError("grid CSV misses required column '" + std::string(col) + "'");
    for (const auto& name : d.covariate_names) {
        if (name == "bg") continue;  // grid cells default to background
        if (name == "ndvi" && rc.ndvi_bands) continue;
        if (g.column(name) < 0)
            throw DataError("grid CSV misses covariate column '" + name + "'");
    }
    d.grid_rows.clear();
    d.grid_covariates.resize(static_cast<long>(g.rows.size()),
                             static_cast<long>(d.covariate_names.size()));
    int gline = 1;
    for (const auto& row : g.rows) {
        ++gline;
        model::GridRow r;
        r.cell_id = row[static_cast<std::size_t>(g.column("cell_id"))];
        r.x = parse_num(row[static_cast<std::size_t>(g.column("x_km"))], "x_km", gline);
        r.y = parse_num(row[static_cast<std::size_t>(g.column("y_km"))], "y_km", gline);
        r.t = static_cast<int>(
            parse_num(row[static_cast<std::size_t>(g.column("month"))], "month", gline));
        const long i = static_cast<long>(d.grid_rows.size());
        for (std::size_t j = 0; j < d.covariate_names.size(); ++j) {
            const auto& name = d.covariate_names[j];
            double v = 0.0;
            if (name == "bg") {
                v = 1.0;
            } else if (name == "ndvi" && rc.ndvi_bands) {
                v = ndvi(parse_num(row[static_cast<std::size_t>(g.column(rc.ndvi_bands->first))],
                                   "nir", gline),
                         parse_num(row[static_cast<std::size_t>(g.column(rc.ndvi_bands->second))],
                                   "red", gline));
            } else {
                v = parse_num(row[static_cast<std::size_t>(g.column(name))], name, gline);
            }
            d.grid_covariates(i, static_cast<long>(j)) = v;
        }
        d.grid_rows.push_back(r);
    }
}

namespace {

// concentration whose re-ingested log reproduces y_log bit-exactly when a
// preimage under correctly-rounded log exists (it always does for values
// that themselves came from log)
double pm25_of(double y_log) {
    const double e = std::exp(y_log);
    if (std::log(e) == y_log) return e;
    for (int k = 1; k <= 3; ++k) {
        double up = e, dn = e;
        for (int s = 0; s < k; ++s) {
            up = std::nextafter(up, std::numeric_limits<double>::infinity());
            dn = std::nextafter(dn, 0.0);
        }
        if (std::log(up) == y_log) return up;
        if (std::log(dn) == y_log) return dn;
    }
    return e;
}

}  // namespace

void write_observations_csv(const model::Dataset& data,
                            const std::vector<std::string>& site_types,
                            const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "site_id,site_type,x_km,y_km,month,pm25";
    for (const auto& n : data.covariate_names)
        if (n != "bg") f << "," << n;
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < data.observations.size(); ++i) {
        const auto& o = data.observations[i];
        f << o.site_id << "," << site_types[i] << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", o.x);
        f << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", o.y);
        f << buf << "," << o.t << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", pm25_of(o.y_log));
        f << buf;
        for (std::size_t j = 0; j < data.covariate_names.size(); ++j) {
            if (data.covariate_names[j] == "bg") continue;
            std::snprintf(buf, sizeof(buf), "%.17g",
                          data.obs_covariates(static_cast<long>(i), static_cast<long>(j)));
            f << "," << buf;
        }
        f << "\n";
    }
}

}  // namespace stfuse::ingest
