#pragma once

// Parameter identification against fermentation time series: residuals of
// simulated trajectories, a bounded Levenberg-Marquardt driver, and the
// efficiency coefficient used to judge the fit.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fracbio/dde.hpp"
#include "fracbio/error.hpp"
#include "fracbio/model.hpp"

namespace fracbio {

enum class FitParam { a, b, c, d, e, alpha, beta, tau };

inline constexpr std::array<FitParam, 8> all_fit_params{FitParam::a,     FitParam::b,    FitParam::c,
                                                        FitParam::d,     FitParam::e,    FitParam::alpha,
                                                        FitParam::beta,  FitParam::tau};

inline std::string_view name_of(FitParam p) {
    switch (p) {
    case FitParam::a: return "a";
    case FitParam::b: return "b";
    case FitParam::c: return "c";
    case FitParam::d: return "d";
    case FitParam::e: return "e";
    case FitParam::alpha: return "alpha";
    case FitParam::beta: return "beta";
    case FitParam::tau: return "tau";
    }
    return "?";
}

inline FitParam fit_param_from_name(std::string_view name) {
    for (auto p : all_fit_params)
        if (name_of(p) == name)
            return p;
    throw InputError("unknown fit parameter '" + std::string(name) + "'");
}

inline double& field(ModelParams& m, FitParam p) {
    switch (p) {
    case FitParam::a: return m.a;
    case FitParam::b: return m.b;
    case FitParam::c: return m.c;
    case FitParam::d: return m.d;
    case FitParam::e: return m.e;
    case FitParam::alpha: return m.alpha;
    case FitParam::beta: return m.beta;
    case FitParam::tau: return m.tau;
    }
    throw InputError("unknown fit parameter");
}

inline double field(const ModelParams& m, FitParam p) { return field(const_cast<ModelParams&>(m), p); }

/// Observed concentrations with their error bars, parallel arrays.
struct Dataset {
    std::vector<double> times;
    std::vector<double> biomass;
    std::vector<double> biomass_err;
    std::vector<double> substrate;
    std::vector<double> substrate_err;

    std::size_t size() const noexcept { return times.size(); }

    void validate() const {
        const auto n = times.size();
        if (biomass.size() != n || biomass_err.size() != n || substrate.size() != n || substrate_err.size() != n)
            throw InputError("dataset columns must have equal length");
        if (n < 2)
            throw InputError("dataset needs at least 2 rows");
        for (std::size_t i = 0; i < n; ++i) {
            if (i > 0 && !(times[i] > times[i - 1]))
                throw InputError("dataset times must be strictly increasing");
            if (!(biomass[i] >= 0.0) || !(substrate[i] >= 0.0))
                throw InputError("dataset concentrations must be nonnegative");
            if (!(biomass_err[i] >= 0.0) || !(substrate_err[i] >= 0.0))
                throw InputError("dataset error bars must be nonnegative");
        }
        if (times.front() < 0.0)
            throw InputError("dataset times must be nonnegative");
    }
};

/// Continuous Zymomonas mobilis fermentation on cocoa pulp, D = 0.15 1/h,
/// sampled every 5 h (error bars: 5 %).
inline Dataset zymomonas_dataset() {
    Dataset ds;
    ds.times = {0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80};
    ds.biomass = {0.1, 0.3, 1.1, 4.3, 8.1, 5.1, 4.0, 4.5, 5.1, 4.9, 4.3, 4.9, 4.1, 5.0, 4.2, 4.9, 4.0};
    ds.biomass_err = {0.005, 0.015, 0.055, 0.215, 0.405, 0.255, 0.20, 0.225, 0.255,
                      0.245, 0.215, 0.245, 0.205, 0.25,  0.21,  0.245, 0.20};
    ds.substrate = {10.0, 9.0, 7.8, 6.1, 3.4, 0.9, 2.1, 2.6, 1.6, 1.9, 2.5, 1.7, 2.4, 1.6, 2.3, 1.4, 2.0};
    ds.substrate_err = {0.5,   0.45, 0.4,   0.33, 0.175, 0.045, 0.105, 0.13, 0.08,
                        0.095, 0.125, 0.085, 0.12, 0.08, 0.115, 0.07,  0.1};
    return ds;
}

/// CSV with header time,biomass,biomass_err,substrate,substrate_err.
inline Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw InputError("dataset CSV is empty");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "time,biomass,biomass_err,substrate,substrate_err")
        throw InputError("dataset CSV header must be time,biomass,biomass_err,substrate,substrate_err");
    Dataset ds;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t", used) != std::string::npos)
                    throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw InputError("dataset CSV row " + std::to_string(row) + ": not a number: '" + cell + "'");
            }
        }
        if (v.size() != 5)
            throw InputError("dataset CSV row " + std::to_string(row) + " must have 5 columns");
        ds.times.push_back(v[0]);
        ds.biomass.push_back(v[1]);
        ds.biomass_err.push_back(v[2]);
        ds.substrate.push_back(v[3]);
        ds.substrate_err.push_back(v[4]);
    }
    ds.validate();
    return ds;
}

/// 1 - Σ|Y - Y*| / Σ|Y* - mean(Y*)|; 1 is a perfect fit, 0 matches the
/// mean predictor.
inline double efficiency_coefficient(const std::vector<double>& simulated, const std::vector<double>& observed) {
    if (simulated.size() != observed.size() || observed.size() < 2)
        throw DegenerateError("efficiency coefficient needs two equal-length series of at least 2 values");
    double mean = 0.0;
    for (double v : observed)
        mean += v;
    mean /= double(observed.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        num += std::abs(simulated[i] - observed[i]);
        den += std::abs(observed[i] - mean);
    }
    if (den == 0.0)
        throw DegenerateError("efficiency coefficient undefined for constant observations");
    return 1.0 - num / den;
}

struct Bound {
    double lo = 0.0;
    double hi = 0.0;
};

/// Open-below boxes used when nothing else is given: (0, 2] for rates,
/// (0.1, 2] for exponents, (0, 10] for the delay.
inline Bound default_bound(FitParam p) {
    switch (p) {
    case FitParam::alpha:
    case FitParam::beta: return {0.1, 2.0};
    case FitParam::tau: return {0.0, 10.0};
    default: return {0.0, 2.0};
    }
}

struct FitSpec {
    std::vector<FitParam> free{all_fit_params.begin(), all_fit_params.end()};
    std::vector<Bound> bounds;  // parallel to `free`; empty means default_bound
    ModelParams initial;        // also carries the fixed s0
    double D = 0.15;
    HistorySpec hist{10.0, 0.1};
    double dt = 0.01;
    /// Divide residuals by the per-point error bars.
    bool weighted = false;
    int max_iterations = 200;

    Bound bound(std::size_t i) const { return bounds.empty() ? default_bound(free[i]) : bounds[i]; }

    void validate() const {
        if (!bounds.empty() && bounds.size() != free.size())
            throw InputError("fit bounds must be given for every free parameter");
        for (std::size_t i = 0; i < free.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j)
                if (free[j] == free[i])
                    throw InputError("fit parameter '" + std::string(name_of(free[i])) + "' listed twice");
            const auto b = bound(i);
            if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || !(b.lo < b.hi))
                throw InputError("fit bounds for '" + std::string(name_of(free[i])) + "' must be finite, lo < hi");
            const double v = field(initial, free[i]);
            if (!(v > b.lo && v < b.hi))
                throw InputError("initial '" + std::string(name_of(free[i])) + "' must lie strictly inside its bounds");
        }
        if (!(dt > 0.0))
            throw InputError("fit step size must be positive");
    }
};

struct FitResult {
    ModelParams params;
    double sse = 0.0;
    double eps1_biomass = 0.0;
    double eps1_substrate = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> sse_history;  // SSE after every accepted step, starting at the initial guess
};

inline constexpr double min_sample_step = 1e-3;

/// Simulated (biomass, substrate) at the dataset times; nullopt when the
/// simulation blows up, leaves the model's domain, or would need a step below
/// min_sample_step.
inline std::optional<std::pair<std::vector<double>, std::vector<double>>>
simulate_at_samples(const ModelParams& params, const Dataset& ds, const FitSpec& spec) {
    double dt = spec.dt;
    if (params.tau > 0.0)
        dt = std::min(dt, params.tau / 4.0);
    // a vanishing but nonzero delay would need an unbounded number of steps
    if (dt < min_sample_step)
        return std::nullopt;
    try {
        const auto tr = simulate(params, ConstantInput{spec.D}, spec.hist, ds.times.back(), dt);
        std::vector<double> x(ds.size()), s(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto z = tr.at(ds.times[i]);
            s[i] = z[0];
            x[i] = z[1];
        }
        return std::pair{std::move(x), std::move(s)};
    } catch (const BlowUpError&) {
        return std::nullopt;
    } catch (const DomainError&) {
        return std::nullopt;
    }
}

/// (sim_x - biomass) then (sim_s - substrate), divided by the error bars when
/// `spec.weighted` is set. A failed simulation yields +inf entries.
inline Eigen::VectorXd residuals(const ModelParams& params, const Dataset& ds, const FitSpec& spec) {
    const auto n = ds.size();
    Eigen::VectorXd r(2 * n);
    const auto sim = simulate_at_samples(params, ds, spec);
    if (!sim) {
        r.setConstant(std::numeric_limits<double>::infinity());
        return r;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double wx = spec.weighted ? ds.biomass_err[i] : 1.0;
        const double ws = spec.weighted ? ds.substrate_err[i] : 1.0;
        r(Eigen::Index(i)) = (sim->first[i] - ds.biomass[i]) / wx;
        r(Eigen::Index(n + i)) = (sim->second[i] - ds.substrate[i]) / ws;
    }
    return r;
}

namespace detail {

/// Logistic map of an unconstrained coordinate onto (lo, hi). Saturated
/// values are pulled one ulp inside the open interval.
inline double to_bounded(double z, Bound b) {
    const double v = b.lo + (b.hi - b.lo) / (1.0 + std::exp(-z));
    return std::clamp(v, std::nextafter(b.lo, b.hi), std::nextafter(b.hi, b.lo));
}

inline double to_free(double v, Bound b) {
    const double r = (v - b.lo) / (b.hi - b.lo);
    return std::log(r / (1.0 - r));
}

inline double sum_sq(const Eigen::VectorXd& r) {
    return r.allFinite() ? r.squaredNorm() : std::numeric_limits<double>::infinity();
}

} // namespace detail

/// Damped Gauss-Newton over the free parameters, each mapped onto its box by
/// a logistic transform. Damping starts at 1e-3 and moves by factors of 10;
/// the normal matrix is shifted by damping times its largest diagonal entry.
inline FitResult levenberg_marquardt(const FitSpec& spec, const Dataset& ds) {
    spec.validate();
    ds.validate();
    if (spec.weighted) {
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (!(ds.biomass_err[i] > 0.0) || !(ds.substrate_err[i] > 0.0))
                throw InputError("weighted fit needs positive error bars");
    }

    const auto np = spec.free.size();
    auto params_from = [&](const Eigen::VectorXd& z) {
        ModelParams m = spec.initial;
        for (std::size_t i = 0; i < np; ++i)
            field(m, spec.free[i]) = detail::to_bounded(z(Eigen::Index(i)), spec.bound(i));
        return m;
    };

    FitResult res;
    Eigen::VectorXd z(static_cast<Eigen::Index>(np));
    for (std::size_t i = 0; i < np; ++i)
        z(Eigen::Index(i)) = detail::to_free(field(spec.initial, spec.free[i]), spec.bound(i));
    ModelParams current = params_from(z);
    if (np == 0)
        current = spec.initial;
    Eigen::VectorXd r = residuals(current, ds, spec);
    double sse = detail::sum_sq(r);
    res.sse_history.push_back(sse);

    if (np == 0) {
        res.converged = true;
    } else if (!std::isfinite(sse)) {
        res.converged = false;
    } else {
        double damping = 1e-3;
        const Eigen::Index m = r.size();
        for (;;) {
            if (res.iterations >= spec.max_iterations)
                break;
            ++res.iterations;

            // forward-difference Jacobian in parameter space, chained through the map
            Eigen::MatrixXd J(m, Eigen::Index(np));
            for (std::size_t i = 0; i < np; ++i) {
                const Bound b = spec.bound(i);
                const double v = field(current, spec.free[i]);
                double step = spec.free[i] == FitParam::tau ? 1e-3 * std::max(v, 1.0)
                                                            : 1e-6 * std::max(std::abs(v), 1e-6);
                if (v + step >= b.hi)
                    step = -step;
                ModelParams pert = current;
                field(pert, spec.free[i]) = v + step;
                Eigen::VectorXd rp = residuals(pert, ds, spec);
                if (!rp.allFinite()) {
                    step = -step;
                    field(pert, spec.free[i]) = v + step;
                    rp = residuals(pert, ds, spec);
                }
                const double dv_dz = (v - b.lo) * (b.hi - v) / (b.hi - b.lo);
                if (rp.allFinite())
                    J.col(Eigen::Index(i)) = (rp - r) / step * dv_dz;
                else
                    J.col(Eigen::Index(i)).setZero();
            }

            const Eigen::MatrixXd A = J.transpose() * J;
            const Eigen::VectorXd g = J.transpose() * r;
            if (g.norm() < 1e-8) {
                res.converged = true;
                break;
            }
            // per-column (Marquardt) scaling strands more starts at the bounds
            const double scale = std::max(A.diagonal().maxCoeff(), 1e-300);

            bool accepted = false;
            double new_sse = sse;
            while (damping < 1e16) {
                Eigen::MatrixXd Ad = A;
                Ad.diagonal().array() += damping * scale;
                const Eigen::VectorXd delta = Ad.ldlt().solve(-g);
                const Eigen::VectorXd z_try = z + delta;
                const ModelParams trial = params_from(z_try);
                const Eigen::VectorXd r_try = residuals(trial, ds, spec);
                const double sse_try = detail::sum_sq(r_try);
                if (delta.allFinite() && sse_try < sse) {
                    z = z_try;
                    current = trial;
                    r = r_try;
                    new_sse = sse_try;
                    damping = std::max(damping / 10.0, 1e-12);
                    accepted = true;
                    break;
                }
                damping *= 10.0;
            }
            if (!accepted) {
                // no descent direction left at finite-difference resolution
                res.converged = true;
                break;
            }
            const double rel = (sse - new_sse) / sse;
            sse = new_sse;
            res.sse_history.push_back(sse);
            if (rel < 1e-10) {
                res.converged = true;
                break;
            }
        }
    }

    res.params = current;
    res.sse = sse;
    if (const auto sim = simulate_at_samples(current, ds, spec)) {
        res.eps1_biomass = efficiency_coefficient(sim->first, ds.biomass);
        res.eps1_substrate = efficiency_coefficient(sim->second, ds.substrate);
    } else {
        res.eps1_biomass = -std::numeric_limits<double>::infinity();
        res.eps1_substrate = -std::numeric_limits<double>::infinity();
    }
    return res;
}

} // namespace fracbio
