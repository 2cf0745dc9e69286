#pragma once

// Batch commands behind the fracbio executable. Each command reads a
// versioned JSON config, writes its outputs into a directory and returns a
// process exit code.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "fracbio/dde.hpp"
#include "fracbio/error.hpp"
#include "fracbio/fit.hpp"
#include "fracbio/io.hpp"
#include "fracbio/model.hpp"
#include "fracbio/stability.hpp"

namespace fracbio::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, failure = 1, input_error = 2, not_converged = 3, no_equilibrium = 4 };

inline constexpr int config_version = 1;

/// Raised when the configured model has no positive operating point.
class NoEquilibriumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    fs::path out_dir = ".";
    std::optional<fs::path> data;  // fit only
    bool max_decay = false;        // regions only
    std::optional<std::uint64_t> seed;
};

inline json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace detail {

using fracbio::detail::check_keys;
using fracbio::detail::number;

inline void check_version(const json& cfg) {
    if (!cfg.at("version").is_number_integer() || cfg.at("version").get<int>() != config_version)
        throw InputError("config version must be " + std::to_string(config_version));
}

inline double number_or(const json& j, const std::string& key, double fallback, const std::string& what) {
    return j.contains(key) ? number(j, key, what) : fallback;
}

inline Interval interval(const json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw InputError(key + " must be a [lo, hi] pair of numbers");
    Interval r{v[0].get<double>(), v[1].get<double>()};
    if (!(r.lo < r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
        throw InputError(key + " must satisfy lo < hi");
    return r;
}

inline HistorySpec history(const json& j) {
    check_keys(j, "history", {"s", "x"});
    HistorySpec h{number(j, "s", "history"), number(j, "x", "history")};
    if (!(h.s_init >= 0.0) || !(h.x_init >= 0.0))
        throw InputError("history values must be nonnegative");
    return h;
}

inline BasicLaw basic_law(const json& j, const std::string& what) {
    fracbio::detail::require_object(j, what);
    if (!j.contains("type") || !j.at("type").is_string())
        throw InputError(what + ".type must be a string");
    const auto type = j.at("type").get<std::string>();
    if (type == "constant") {
        check_keys(j, what, {"type", "D"});
        return ConstantInput{number(j, "D", what)};
    }
    if (type == "delayed_proportional") {
        check_keys(j, what, {"type", "k_r", "h"});
        return DelayedProportional{number(j, "k_r", what), number(j, "h", what)};
    }
    throw InputError(what + ".type '" + type + "' is not constant or delayed_proportional");
}

inline ControlLaw control_law(const json& j) {
    fracbio::detail::require_object(j, "law");
    if (j.contains("type") && j.at("type") == "scheduled") {
        check_keys(j, "law", {"type", "first", "second", "switch_time"});
        ScheduledLaw law{basic_law(j.at("first"), "law.first"), basic_law(j.at("second"), "law.second"),
                         number(j, "switch_time", "law")};
        return law;
    }
    return std::visit([](const auto& l) -> ControlLaw { return l; }, basic_law(j, "law"));
}

/// Operating point shared by stability and regions: the open-loop
/// equilibrium at D (smallest biomass level), or the point pinned by x_star.
inline EquilibriumPoint operating_point(const ModelParams& m, const json& cfg, double D) {
    if (cfg.contains("x_star")) {
        const double x = number(cfg, "x_star", "config");
        try {
            return {substrate_at(m, x), x, std::nullopt};
        } catch (const DomainError& e) {
            throw NoEquilibriumError(e.what());
        }
    }
    const auto eqs = solve_equilibrium_open_loop(m, D);
    if (eqs.empty())
        throw NoEquilibriumError("no positive equilibrium for D = " + std::to_string(D));
    return eqs.front();
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write " + path.string());
    return out;
}

inline std::string sigma_tag(double sigma) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", sigma);
    return buf;
}

} // namespace detail

/// Equilibrium, open-loop characteristic coefficients, crossings and the
/// delay window, written to stability.json.
inline int cmd_stability(const json& cfg, const Options& opt) {
    detail::check_keys(cfg, "config", {"version", "params"}, {"D", "x_star", "n_max"});
    detail::check_version(cfg);
    const ModelParams m = model_params_from_json(cfg.at("params"));
    const double D = detail::number_or(cfg, "D", 0.15, "config");
    const int n_max = cfg.contains("n_max") ? cfg.at("n_max").get<int>() : 4;
    if (!(D >= 0.0 && D <= 1.0))
        throw InputError("D must lie in [0, 1]");
    if (n_max < 0)
        throw InputError("n_max must be nonnegative");

    const EquilibriumPoint eq = detail::operating_point(m, cfg, D);
    const auto lin = linearize(m, eq, D);
    const auto qp = open_loop_quasipolynomial(lin);
    const double k1 = qp.p1(), k2 = qp.p0(), k3 = qp.exp_terms().front().coeff;

    json report;
    report["metadata"] = metadata("stability", cfg);
    report["equilibrium"] = to_json(eq);
    report["beta_outside_observed_range"] = m.beta_outside_observed_range();
    report["kappas"] = {k1, k2, k3};
    report["P_coefficients"] = {1.0, 0.0, k1 * k1 - 2.0 * k2, 0.0, k2 * k2 - k3 * k3};
    const auto crossings = analyze_crossings(qp, n_max);
    report["crossings"] = to_json(crossings);
    report["crossing_sign"] = crossing_direction(qp);
    try {
        const auto window = stability_window(qp);
        if (window.delay_independent) {
            report["window"] = {{"lo", 0.0}, {"hi", nullptr}};
            report["verdict"] = "delay-independent stable";
        } else {
            report["window"] = {{"lo", 0.0}, {"hi", window.upper}};
            report["verdict"] = "stable for tau in (0, tau0)";
        }
    } catch (const DomainError&) {
        report["window"] = nullptr;
        report["verdict"] = "unstable at zero delay";
    }
    report["tau"] = m.tau;
    report["roots_right_half_plane_at_tau"] = count_roots_right_of(qp, 0.0);

    fs::create_directories(opt.out_dir);
    detail::write_json(opt.out_dir / "stability.json", report);
    return ok;
}

/// σ-stability boundaries in the (h, k_r) plane, one JSON per σ plus a
/// long-format CSV; optionally the maximal decay rate.
inline int cmd_regions(const json& cfg, const Options& opt) {
    detail::check_keys(cfg, "config", {"version", "params", "sigmas"},
                       {"D", "x_star", "h_range", "omega_max", "n_range", "omega_samples", "max_decay"});
    detail::check_version(cfg);
    const ModelParams m = model_params_from_json(cfg.at("params"));
    const double D = detail::number_or(cfg, "D", 0.15, "config");
    if (!cfg.at("sigmas").is_array() || cfg.at("sigmas").empty())
        throw InputError("sigmas must be a nonempty array");
    std::vector<double> sigmas;
    for (const auto& s : cfg.at("sigmas")) {
        if (!s.is_number() || !(s.get<double>() >= 0.0))
            throw InputError("every sigma must be a nonnegative number");
        sigmas.push_back(s.get<double>());
    }
    const Interval h_range = cfg.contains("h_range") ? detail::interval(cfg, "h_range") : Interval{0.0, 12.0};
    if (h_range.lo < 0.0)
        throw InputError("h_range must be nonnegative");
    RegionOptions ropt;
    ropt.omega_max = detail::number_or(cfg, "omega_max", ropt.omega_max, "config");
    if (cfg.contains("omega_samples"))
        ropt.omega_samples = cfg.at("omega_samples").get<int>();
    if (cfg.contains("n_range")) {
        const auto& nr = cfg.at("n_range");
        if (!nr.is_array() || nr.size() != 2 || !nr[0].is_number_integer() || !nr[1].is_number_integer()
            || nr[0].get<int>() > nr[1].get<int>() || nr[0].get<int>() < 0)
            throw InputError("n_range must be [n_min, n_max] with 0 <= n_min <= n_max");
        ropt.n_min = nr[0].get<int>();
        ropt.n_max = nr[1].get<int>();
    }
    if (!(ropt.omega_max > 0.0) || ropt.omega_samples < 2)
        throw InputError("omega_max must be positive and omega_samples >= 2");

    DecaySearchOptions dopt;
    if (cfg.contains("max_decay")) {
        const auto& md = cfg.at("max_decay");
        detail::check_keys(md, "max_decay", {}, {"grid", "k_range", "zoom_levels"});
        if (md.contains("grid"))
            dopt.grid = md.at("grid").get<int>();
        if (md.contains("zoom_levels"))
            dopt.zoom_levels = md.at("zoom_levels").get<int>();
        if (md.contains("k_range"))
            dopt.k_range = detail::interval(md, "k_range");
        if (dopt.grid < 4 || dopt.zoom_levels < 0)
            throw InputError("max_decay.grid must be >= 4 and zoom_levels >= 0");
    }

    const EquilibriumPoint op = detail::operating_point(m, cfg, D);
    EquilibriumPoint eq;
    try {
        eq = solve_equilibrium_closed_loop(m, op.x_star);
    } catch (const DomainError& e) {
        throw NoEquilibriumError(e.what());
    }
    const auto lin = linearize(m, eq, *eq.u_star);
    const auto cl = closed_loop_coefficients(lin);

    fs::create_directories(opt.out_dir);
    json summary;
    summary["metadata"] = metadata("regions", cfg);
    summary["equilibrium"] = to_json(eq);
    summary["coefficients"] = {{"eta1", cl.eta1}, {"eta2", cl.eta2}, {"eta3", cl.eta3}, {"mu", cl.mu},
                               {"tau", cl.tau}};
    summary["files"] = json::array();

    auto csv = detail::open_out(opt.out_dir / "regions_boundary.csv");
    write_boundary_csv_header(csv);
    const Interval k_band = dopt.k_range.value_or(Interval{0.0, 1.0 / eq.x_star});
    for (double sigma : sigmas) {
        const auto region = sigma_region_boundaries(lin, sigma, h_range, ropt);
        json j = to_json(region);
        j["border"] = to_json(stable_border(lin, region, k_band));
        j["metadata"] = metadata("regions", cfg);
        const std::string name = "region_sigma_" + detail::sigma_tag(sigma) + ".json";
        detail::write_json(opt.out_dir / name, j);
        summary["files"].push_back(name);
        write_boundary_csv_rows(csv, region);
    }
    if (opt.max_decay)
        summary["max_decay"] = to_json(max_decay_rate(lin, h_range, dopt));
    detail::write_json(opt.out_dir / "regions.json", summary);
    return ok;
}

/// Nonlinear simulation: trajectory.csv, phase.csv and trajectory.json.
inline int cmd_simulate(const json& cfg, const Options& opt) {
    detail::check_keys(cfg, "config", {"version", "params", "law", "history", "t_f"}, {"dt"});
    detail::check_version(cfg);
    const ModelParams m = model_params_from_json(cfg.at("params"));
    const ControlLaw law = detail::control_law(cfg.at("law"));
    const HistorySpec hist = detail::history(cfg.at("history"));
    const double t_f = detail::number(cfg, "t_f", "config");
    const double dt = detail::number_or(cfg, "dt", 0.01, "config");
    try {
        validate(law);
    } catch (const DomainError& e) {
        throw InputError(e.what());
    }

    const Trajectory tr = simulate(m, law, hist, t_f, dt);

    fs::create_directories(opt.out_dir);
    {
        auto out = detail::open_out(opt.out_dir / "trajectory.csv");
        write_trajectory_csv(out, tr);
    }
    {
        auto out = detail::open_out(opt.out_dir / "phase.csv");
        write_phase_csv(out, tr);
    }
    json j;
    j["metadata"] = metadata("simulate", cfg);
    j["trajectory"] = to_json(tr);
    detail::write_json(opt.out_dir / "trajectory.json", j);
    return ok;
}

inline FitSpec fit_spec_from_json(const json& cfg) {
    detail::check_keys(cfg, "config", {"version", "initial"},
                       {"free", "bounds", "D", "history", "dt", "weighted", "max_iterations"});
    detail::check_version(cfg);
    FitSpec spec;
    spec.initial = model_params_from_json(cfg.at("initial"));
    if (cfg.contains("free")) {
        if (!cfg.at("free").is_array())
            throw InputError("free must be an array of parameter names");
        spec.free.clear();
        for (const auto& name : cfg.at("free"))
            spec.free.push_back(fit_param_from_name(name.get<std::string>()));
    }
    if (cfg.contains("bounds")) {
        const auto& b = cfg.at("bounds");
        fracbio::detail::require_object(b, "bounds");
        for (const auto& [key, _] : b.items()) {
            const auto p = fit_param_from_name(key);
            if (std::find(spec.free.begin(), spec.free.end(), p) == spec.free.end())
                throw InputError("bounds given for fixed parameter '" + key + "'");
        }
        for (auto p : spec.free) {
            const std::string key(name_of(p));
            if (b.contains(key)) {
                const auto iv = detail::interval(b, key);
                spec.bounds.push_back({iv.lo, iv.hi});
            } else {
                spec.bounds.push_back(default_bound(p));
            }
        }
    }
    spec.D = detail::number_or(cfg, "D", spec.D, "config");
    if (cfg.contains("history"))
        spec.hist = detail::history(cfg.at("history"));
    spec.dt = detail::number_or(cfg, "dt", spec.dt, "config");
    if (cfg.contains("weighted"))
        spec.weighted = cfg.at("weighted").get<bool>();
    if (cfg.contains("max_iterations"))
        spec.max_iterations = cfg.at("max_iterations").get<int>();
    if (!(spec.D >= 0.0 && spec.D <= 1.0))
        throw InputError("D must lie in [0, 1]");
    spec.validate();
    return spec;
}

/// Fits the model to a dataset: fit_result.json, fit_overlay.csv (sample
/// times, observed vs simulated) and fit_trajectory.csv (dense fitted curve).
inline int cmd_fit(const json& cfg, const Options& opt) {
    const FitSpec spec = fit_spec_from_json(cfg);
    if (!opt.data)
        throw InputError("fit needs --data PATH");
    const std::string raw = read_file(*opt.data);
    std::istringstream in(raw);
    const Dataset ds = read_dataset_csv(in);

    const FitResult res = levenberg_marquardt(spec, ds);

    fs::create_directories(opt.out_dir);
    json j = to_json(res);
    j["metadata"] = metadata("fit", cfg, raw);
    j["free"] = json::array();
    for (auto p : spec.free)
        j["free"].push_back(std::string(name_of(p)));
    j["weighted"] = spec.weighted;
    detail::write_json(opt.out_dir / "fit_result.json", j);

    if (const auto sim = simulate_at_samples(res.params, ds, spec)) {
        auto out = detail::open_out(opt.out_dir / "fit_overlay.csv");
        out.precision(12);
        out << "time,biomass_obs,biomass_sim,substrate_obs,substrate_sim\n";
        for (std::size_t i = 0; i < ds.size(); ++i)
            out << ds.times[i] << ',' << ds.biomass[i] << ',' << sim->first[i] << ',' << ds.substrate[i] << ','
                << sim->second[i] << '\n';
        double dt = spec.dt;
        if (res.params.tau > 0.0)
            dt = std::min(dt, res.params.tau / 4.0);
        const auto tr = simulate(res.params, ConstantInput{spec.D}, spec.hist, ds.times.back(), dt);
        auto dense = detail::open_out(opt.out_dir / "fit_trajectory.csv");
        write_trajectory_csv(dense, tr);
    }
    return res.converged ? ok : not_converged;
}

/// Maps library and schema failures onto exit codes, reporting on `err`.
template <class F>
int run_guarded(F&& body, std::ostream& err = std::cerr) {
    try {
        return body();
    } catch (const NoEquilibriumError& e) {
        err << "error: no equilibrium: " << e.what() << '\n';
        return no_equilibrium;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return input_error;
    } catch (const StepSizeError& e) {
        err << "error: " << e.what() << '\n';
        return input_error;
    } catch (const json::exception& e) {
        err << "error: config: " << e.what() << '\n';
        return input_error;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << '\n';
        return input_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return failure;
    }
}

} // namespace fracbio::cli
