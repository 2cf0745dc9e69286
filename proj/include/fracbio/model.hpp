#pragma once

// Fractional Lotka-Volterra bioreactor with a delayed biomass coupling:
//
//   ds/dt = -a s^β - b s^β x(t-τ)^α + (s0 - s) u(t)
//   dx/dt =  c s^β x^α - d x^α + e x
//
// Equilibria (open loop and under feedback), the analytic linearization and
// the characteristic quasi-polynomials built from it.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fracbio/error.hpp"
#include "fracbio/quasi_polynomial.hpp"

namespace fracbio {

struct ModelParams {
    double a = 0.0;     // 1/h
    double b = 0.0;     // 1/h
    double c = 0.0;     // 1/h
    double d = 0.0;     // 1/h
    double e = 0.0;     // 1/h
    double alpha = 1.0;
    double beta = 1.0;
    double s0 = 0.0;    // g/L
    double tau = 0.0;   // h

    /// Throws DomainError on the hard invariants.
    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw DomainError(std::string("model parameter ") + name + " must be positive and finite");
        };
        positive(a, "a");
        positive(b, "b");
        positive(c, "c");
        positive(d, "d");
        positive(e, "e");
        positive(alpha, "alpha");
        positive(beta, "beta");
        positive(s0, "s0");
        if (!(tau >= 0.0) || !std::isfinite(tau))
            throw DomainError("model parameter tau must be nonnegative and finite");
    }

    /// Experimentally the substrate exponent lies in (0, 1). Values outside
    /// are accepted; callers may surface this flag.
    bool beta_outside_observed_range() const noexcept { return !(beta > 0.0 && beta < 1.0); }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// The identified parameter set for the Zymomonas mobilis fermentation.
inline ModelParams zymomonas_params() {
    return {0.16, 0.11, 0.282, 0.47, 0.212, 1.3, 0.27, 10.0, 1.8};
}

/// base^p for a real model; negative bases are outside the model.
inline double frac_pow(double base, double p) {
    if (base < 0.0)
        throw DomainError("fractional power of negative base " + std::to_string(base));
    return std::pow(base, p);
}

/// Right-hand side of the model at a single instant.
inline std::array<double, 2> vector_field(const ModelParams& m, double s, double x, double x_delayed,
                                          double u) {
    const double sb = frac_pow(s, m.beta);
    const double ds = -m.a * sb - m.b * sb * frac_pow(x_delayed, m.alpha) + (m.s0 - s) * u;
    const double xa = frac_pow(x, m.alpha);
    const double dx = m.c * sb * xa - m.d * xa + m.e * x;
    return {ds, dx};
}

struct EquilibriumPoint {
    double s_star = 0.0;
    double x_star = 0.0;
    std::optional<double> u_star;

    friend bool operator==(const EquilibriumPoint&, const EquilibriumPoint&) = default;
};

/// s* as a function of x* from the biomass balance; DomainError when the
/// bracket d - e·x^(1-α) is not positive.
inline double substrate_at(const ModelParams& m, double x) {
    if (!(x > 0.0))
        throw DomainError("biomass level must be positive, got " + std::to_string(x));
    const double bracket = m.d - m.e * std::pow(x, 1.0 - m.alpha);
    if (!(bracket > 0.0))
        throw DomainError("d - e*x^(1-alpha) <= 0 at x = " + std::to_string(x) + ": no positive s*");
    return std::pow(bracket / m.c, 1.0 / m.beta);
}

/// Left-hand side of the open-loop equilibrium condition in x.
inline double equilibrium_residual(double x, const ModelParams& m, double D) {
    if (!(x > 0.0))
        throw DomainError("biomass level must be positive, got " + std::to_string(x));
    double bracket = m.d - m.e * std::pow(x, 1.0 - m.alpha);
    // the edge of the admissible set (s* = 0) is kept as a limit; rounding
    // of x there may leave a bracket of either sign at the ulp level
    if (!(bracket > -1e-12 * m.d))
        throw DomainError("d - e*x^(1-alpha) <= 0 at x = " + std::to_string(x) + ": no positive s*");
    bracket = std::max(bracket, 0.0);
    const double g = bracket / m.c;
    return (m.a + m.b * std::pow(x, m.alpha)) * g + D * (std::pow(g, 1.0 / m.beta) - m.s0);
}

namespace detail {

/// Safeguarded regula falsi (Illinois) with bisection fallback on a sign
/// change [lo, hi]. Stops at |f| < ftol or when the bracket is exhausted.
inline double polish_root(const std::function<double(double)>& f, double lo, double hi, double flo,
                          double fhi, double ftol) {
    int side = 0;
    double best = std::abs(flo) < std::abs(fhi) ? lo : hi;
    double fbest = std::min(std::abs(flo), std::abs(fhi));
    for (int it = 0; it < 400 && fbest >= ftol; ++it) {
        double mid = (lo * fhi - hi * flo) / (fhi - flo);
        // secant step landing too close to an end point: bisect instead
        const double width = hi - lo;
        if (!(mid > lo + 1e-3 * width && mid < hi - 1e-3 * width))
            mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        const double fm = f(mid);
        if (std::abs(fm) < fbest) {
            fbest = std::abs(fm);
            best = mid;
        }
        if (fm == 0.0)
            return mid;
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
            if (side == -1)
                fhi *= 0.5;
            side = -1;
        } else {
            hi = mid;
            fhi = fm;
            if (side == 1)
                flo *= 0.5;
            side = 1;
        }
    }
    return best;
}

/// Admissible biomass interval (d - e·x^(1-α) > 0) spanning `decades`
/// decades away from the boundary; empty optional when no x qualifies.
/// Worked in logarithms and clipped to [1e-250, 1e250] since the boundary
/// (d/e)^(1/(1-α)) under- or overflows as α approaches 1.
inline std::optional<std::pair<double, double>> admissible_interval(const ModelParams& m,
                                                                    double decades = 10.0) {
    const double span = decades * std::log(10.0);
    const double log_min = std::log(1e-250), log_max = std::log(1e250);
    if (m.alpha == 1.0) {
        if (m.d > m.e)
            return std::pair{std::exp(-span), std::exp(span)};
        return std::nullopt;
    }
    const double log_bound = std::log(m.d / m.e) / (1.0 - m.alpha);
    double lo = 0.0, hi = 0.0;
    if (m.alpha < 1.0) {
        // admissible below the bound
        hi = std::min(log_bound - 1e-12, log_max);
        lo = std::max(hi - span, log_min);
    } else {
        lo = std::max(log_bound + 1e-12, log_min);
        hi = std::min(lo + span, log_max);
    }
    if (!(lo < hi))
        return std::nullopt;
    return std::pair{std::exp(lo), std::exp(hi)};
}

/// Roots of (a + b x^α) g(x) - inflow(x)·(s0 - g(x)^(1/β)) over the
/// admissible interval, g = (d - e x^(1-α))/c. Sign changes are bracketed on
/// a 4096-point log grid and polished to |residual| < 1e-12.
inline std::vector<double> equilibrium_biomass_levels(const ModelParams& m,
                                                      const std::function<double(double)>& inflow) {
    const auto interval = admissible_interval(m);
    if (!interval)
        return {};
    auto residual = [&](double x) {
        const double g = (m.d - m.e * std::pow(x, 1.0 - m.alpha)) / m.c;
        return (m.a + m.b * std::pow(x, m.alpha)) * g - inflow(x) * (m.s0 - std::pow(g, 1.0 / m.beta));
    };

    constexpr int n_grid = 4096;
    const double log_lo = std::log(interval->first);
    const double log_hi = std::log(interval->second);
    std::vector<double> roots;
    double x_prev = interval->first;
    double f_prev = residual(x_prev);
    if (f_prev == 0.0)
        roots.push_back(x_prev);
    for (int i = 1; i < n_grid; ++i) {
        const double x = std::exp(log_lo + (log_hi - log_lo) * i / (n_grid - 1));
        const double f = residual(x);
        if (f == 0.0) {
            roots.push_back(x);
        } else if (f_prev != 0.0 && ((f < 0.0) != (f_prev < 0.0))) {
            roots.push_back(polish_root(residual, x_prev, x, f_prev, f, 1e-12));
        }
        x_prev = x;
        f_prev = f;
    }
    return roots;
}

} // namespace detail

/// All positive equilibria under a constant dilution rate D.
inline std::vector<EquilibriumPoint> solve_equilibrium_open_loop(const ModelParams& m, double D) {
    m.validate();
    if (!(D >= 0.0))
        throw DomainError("dilution rate must be nonnegative");
    std::vector<EquilibriumPoint> out;
    for (double x : detail::equilibrium_biomass_levels(m, [D](double) { return D; })) {
        const double s = substrate_at(m, x);
        if (s > 0.0)
            out.push_back({s, x, std::nullopt});
    }
    return out;
}

/// Equilibria of the loop closed by u = k_r·x (the steady state of a
/// delayed proportional law, whatever its delay). u* = k_r·x*; points with
/// u* outside [0, 1] are dropped.
inline std::vector<EquilibriumPoint> solve_equilibrium_feedback(const ModelParams& m, double k_r) {
    m.validate();
    std::vector<EquilibriumPoint> out;
    for (double x : detail::equilibrium_biomass_levels(m, [k_r](double x) { return k_r * x; })) {
        const double s = substrate_at(m, x);
        const double u = k_r * x;
        if (s > 0.0 && u >= 0.0 && u <= 1.0)
            out.push_back({s, x, u});
    }
    return out;
}

/// Steady input that makes a prescribed biomass level x* an equilibrium.
inline EquilibriumPoint solve_equilibrium_closed_loop(const ModelParams& m, double x_star) {
    m.validate();
    if (!(x_star > 0.0))
        throw DomainError("closed-loop equilibrium: x* must be positive");
    if (!(m.d - m.e * std::pow(x_star, 1.0 - m.alpha) > 0.0))
        throw DomainError("closed-loop equilibrium: d - e*x*^(1-alpha) <= 0, no positive s*");
    const double s = substrate_at(m, x_star);
    if (!(s < m.s0))
        throw DomainError("closed-loop equilibrium: s* = " + std::to_string(s) + " is not below s0");
    const double uptake = m.a + m.b * std::pow(x_star, m.alpha);
    const double sb = std::pow(s, m.beta);
    if (!(uptake <= (m.s0 - s) / sb))
        throw DomainError("closed-loop equilibrium: a + b*x*^alpha exceeds (s0 - s*)/s*^beta, u* > 1");
    return {s, x_star, uptake * sb / (m.s0 - s)};
}

/// z' = A0 z(t) + A1 z(t - τ) + B u(t) about an equilibrium.
struct LinearizedModel {
    Eigen::Matrix2d A0 = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d A1 = Eigen::Matrix2d::Zero();
    Eigen::Vector2d B = Eigen::Vector2d::Zero();
    double state_delay = 0.0;
    double input_level = 0.0;
    EquilibriumPoint equilibrium;

    /// Coefficient of x(t-τ) in the substrate equation (the only entry of A1).
    double delayed_coupling() const noexcept { return A1(0, 1); }
};

/// Analytic Jacobians at `eq` with u held at `input_level` (D or u*).
inline LinearizedModel linearize(const ModelParams& m, const EquilibriumPoint& eq, double input_level) {
    const double s = eq.s_star;
    const double x = eq.x_star;
    if (!(s > 0.0) || !(x > 0.0))
        throw DomainError("linearize: equilibrium must be strictly positive");
    const double sb = std::pow(s, m.beta);
    const double sb1 = std::pow(s, m.beta - 1.0);
    const double xa = std::pow(x, m.alpha);
    const double xa1 = std::pow(x, m.alpha - 1.0);

    LinearizedModel lin;
    lin.A0(0, 0) = m.beta * (-m.a - m.b * xa) * sb1 - input_level;
    lin.A0(0, 1) = 0.0;
    lin.A0(1, 0) = m.beta * m.c * sb1 * xa;
    lin.A0(1, 1) = m.alpha * (m.c * sb - m.d) * xa1 + m.e;
    lin.A1(0, 1) = -m.b * m.alpha * sb * xa1;
    lin.B(0) = m.s0 - s;
    lin.state_delay = m.tau;
    lin.input_level = input_level;
    lin.equilibrium = eq;
    return lin;
}

/// Characteristic function det(λI - A0 - A1 e^(-τλ)) as a quasi-polynomial.
inline QuasiPolynomial open_loop_quasipolynomial(const LinearizedModel& lin) {
    const auto& A0 = lin.A0;
    const double p1 = -A0.trace();
    const double p0 = A0.determinant();
    // only the (0,1) entry of A1 is structurally nonzero
    const double k3 = -A0(1, 0) * lin.A1(0, 1);
    return {p1, p0, {{k3, lin.state_delay}}};
}

/// Coefficients of the closed-loop characteristic function
///   λ² + η1 λ + η2 + η3 e^(-τλ) + μ k_r e^(-hλ)
/// with the controller term signed as the determinant produces it.
struct ClosedLoopCoefficients {
    double eta1 = 0.0;
    double eta2 = 0.0;
    double eta3 = 0.0;
    double mu = 0.0;
    double tau = 0.0;
};

inline ClosedLoopCoefficients closed_loop_coefficients(const LinearizedModel& lin) {
    const auto& A0 = lin.A0;
    return {-A0.trace(), A0.determinant(), -A0(1, 0) * lin.A1(0, 1), -A0(1, 0) * lin.B(0),
            lin.state_delay};
}

/// det(λI - A0 - A1 e^(-τλ) - B K e^(-hλ)) with K = (0, k_r).
inline QuasiPolynomial closed_loop_quasipolynomial(const LinearizedModel& lin, double k_r, double h) {
    if (!(h >= 0.0))
        throw DomainError("controller delay must be nonnegative");
    const auto cl = closed_loop_coefficients(lin);
    return {cl.eta1, cl.eta2, {{cl.eta3, cl.tau}, {cl.mu * k_r, h}}};
}

} // namespace fracbio
