#pragma once

// JSON and CSV encodings of the library's values.

#include <cstdint>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

#include "fracbio/dde.hpp"
#include "fracbio/error.hpp"
#include "fracbio/fit.hpp"
#include "fracbio/model.hpp"
#include "fracbio/stability.hpp"

namespace fracbio {

using json = nlohmann::json;

inline constexpr const char* tool_version = "0.1.0";

namespace detail {

inline void require_object(const json& j, const std::string& what) {
    if (!j.is_object())
        throw InputError(what + " must be a JSON object");
}

/// Rejects keys outside `allowed` and reports every missing required key.
inline void check_keys(const json& j, const std::string& what, const std::set<std::string>& required,
                       const std::set<std::string>& optional = {}) {
    require_object(j, what);
    for (const auto& [key, _] : j.items()) {
        if (!required.count(key) && !optional.count(key))
            throw InputError(what + ": unknown key '" + key + "'");
    }
    for (const auto& key : required) {
        if (!j.contains(key))
            throw InputError(what + ": missing key '" + key + "'");
    }
}

inline double number(const json& j, const std::string& key, const std::string& what) {
    const auto& v = j.at(key);
    if (!v.is_number())
        throw InputError(what + "." + key + " must be a number");
    return v.get<double>();
}

} // namespace detail

inline json to_json(const ModelParams& m) {
    return json{{"a", m.a},         {"b", m.b},       {"c", m.c},   {"d", m.d},    {"e", m.e},
                {"alpha", m.alpha}, {"beta", m.beta}, {"s0", m.s0}, {"tau", m.tau}};
}

inline ModelParams model_params_from_json(const json& j) {
    const std::string what = "params";
    detail::check_keys(j, what, {"a", "b", "c", "d", "e", "alpha", "beta", "s0", "tau"});
    ModelParams m;
    m.a = detail::number(j, "a", what);
    m.b = detail::number(j, "b", what);
    m.c = detail::number(j, "c", what);
    m.d = detail::number(j, "d", what);
    m.e = detail::number(j, "e", what);
    m.alpha = detail::number(j, "alpha", what);
    m.beta = detail::number(j, "beta", what);
    m.s0 = detail::number(j, "s0", what);
    m.tau = detail::number(j, "tau", what);
    try {
        m.validate();
    } catch (const DomainError& e) {
        throw InputError(e.what());
    }
    return m;
}

inline json to_json(const EquilibriumPoint& eq) {
    json j{{"s_star", eq.s_star}, {"x_star", eq.x_star}};
    if (eq.u_star)
        j["u_star"] = *eq.u_star;
    return j;
}

inline json to_json(const QuasiPolynomial& qp) {
    json terms = json::array();
    for (const auto& t : qp.exp_terms())
        terms.push_back({{"coeff", t.coeff}, {"delay", t.delay}});
    return json{{"p1", qp.p1()}, {"p0", qp.p0()}, {"exp_terms", terms}};
}

inline json to_json(const CrossingSet& set) {
    json taus = json::array();
    for (const auto& c : set.tau_candidates)
        taus.push_back({{"value", c.tau}, {"genuine", c.genuine}, {"omega0", c.omega0}});
    return json{{"omega0", set.omega0}, {"tau", taus}};
}

inline json to_json(const SigmaRegion& region) {
    json curves = json::array();
    json pts = json::array();
    for (const auto& p : region.lambda0_curve)
        pts.push_back({p.h, p.k_r});
    curves.push_back({{"type", "lambda0"}, {"n", nullptr}, {"points", pts}});
    for (const auto& c : region.iw_curves) {
        json cp = json::array();
        json om = json::array();
        for (const auto& p : c.points) {
            cp.push_back({p.h, p.k_r});
            om.push_back(p.omega);
        }
        curves.push_back({{"type", "iomega"}, {"n", c.n}, {"points", cp}, {"omega", om}});
    }
    return json{{"sigma", region.sigma},
                {"h_range", {region.h_range.lo, region.h_range.hi}},
                {"curves", curves}};
}

/// Points bordering the σ-stable set with their bounding box (null when the
/// set is empty).
inline json to_json(const std::vector<BoundaryPoint>& border) {
    json pts = json::array();
    if (border.empty())
        return json{{"points", pts}, {"bbox", nullptr}};
    double h_lo = border.front().h, h_hi = h_lo, k_lo = border.front().k_r, k_hi = k_lo;
    for (const auto& p : border) {
        pts.push_back({p.h, p.k_r});
        h_lo = std::min(h_lo, p.h);
        h_hi = std::max(h_hi, p.h);
        k_lo = std::min(k_lo, p.k_r);
        k_hi = std::max(k_hi, p.k_r);
    }
    return json{{"points", pts}, {"bbox", {{"h", {h_lo, h_hi}}, {"k_r", {k_lo, k_hi}}}}};
}

/// Long-format boundary table: sigma,type,n,h,k_r,omega (n is -1 on the λ = 0 curve).
inline void write_boundary_csv_header(std::ostream& os) { os << "sigma,type,n,segment,h,k_r,omega\n"; }

inline void write_boundary_csv_rows(std::ostream& os, const SigmaRegion& region) {
    const auto old = os.precision(12);
    for (const auto& p : region.lambda0_curve)
        os << region.sigma << ",lambda0,-1,0," << p.h << ',' << p.k_r << ",0\n";
    std::size_t seg = 0;
    for (const auto& c : region.iw_curves) {
        for (const auto& p : c.points)
            os << region.sigma << ",iomega," << c.n << ',' << seg << ',' << p.h << ',' << p.k_r << ','
               << p.omega << '\n';
        ++seg;
    }
    os.precision(old);
}

inline json to_json(const DecayOptimum& d) {
    return json{{"sigma_star", d.sigma_star}, {"collapse_point", {d.h, d.k_r}}, {"cells", d.cells}};
}

/// Nodal values plus the Hermite slopes, which is everything `Trajectory::at`
/// needs to replay the dense output exactly.
inline json to_json(const Trajectory& tr) {
    return json{{"dt", tr.dt()},
                {"history", {{"s", tr.history().s_init}, {"x", tr.history().x_init}}},
                {"s", tr.s()},
                {"x", tr.x()},
                {"u", tr.u()},
                {"ds", tr.ds()},
                {"dx", tr.dx()},
                {"state_clamps", tr.state_clamps},
                {"control_clamps", tr.control_clamps}};
}

inline Trajectory trajectory_from_json(const json& j) {
    detail::check_keys(j, "trajectory", {"dt", "history", "s", "x", "u", "ds", "dx"},
                       {"state_clamps", "control_clamps"});
    detail::check_keys(j.at("history"), "trajectory.history", {"s", "x"});
    try {
        Trajectory tr(j.at("dt").get<double>(),
                      HistorySpec{j.at("history").at("s").get<double>(), j.at("history").at("x").get<double>()},
                      j.at("s").get<std::vector<double>>(), j.at("x").get<std::vector<double>>(),
                      j.at("u").get<std::vector<double>>(), j.at("ds").get<std::vector<double>>(),
                      j.at("dx").get<std::vector<double>>());
        tr.state_clamps = j.value("state_clamps", std::size_t{0});
        tr.control_clamps = j.value("control_clamps", std::size_t{0});
        return tr;
    } catch (const json::exception& e) {
        throw InputError(std::string("trajectory: ") + e.what());
    }
}

inline json to_json(const FitResult& r) {
    return json{{"params", to_json(r.params)},
                {"sse", r.sse},
                {"eps1_biomass", r.eps1_biomass},
                {"eps1_substrate", r.eps1_substrate},
                {"iterations", r.iterations},
                {"converged", r.converged},
                {"sse_history", r.sse_history}};
}

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    const auto old = os.precision(12);
    os << "time,biomass,biomass_err,substrate,substrate_err\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
        os << ds.times[i] << ',' << ds.biomass[i] << ',' << ds.biomass_err[i] << ',' << ds.substrate[i] << ','
           << ds.substrate_err[i] << '\n';
    os.precision(old);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4)
        s[std::size_t(i)] = digits[v & 0xf];
    return s;
}

/// Provenance block attached to every output: the tool version and a hash of
/// the canonical (minified, key-sorted) config plus any extra input bytes.
inline json metadata(const std::string& command, const json& config, std::string_view extra_input = {}) {
    std::string canon = config.dump();
    canon += '\n';
    canon.append(extra_input);
    return json{{"tool", "fracbio"}, {"version", tool_version}, {"command", command},
                {"config_hash", "fnv1a64:" + hex64(fnv1a(canon))}};
}

} // namespace fracbio
