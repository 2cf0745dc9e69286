#pragma once

// D-partition analysis of the characteristic quasi-polynomials: crossing
// frequencies and delays of the open loop, Hopf crossing direction, root
// counting by the argument principle, and σ-stability maps of the delayed
// proportional controller in the (h, k_r) plane.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fracbio/error.hpp"
#include "fracbio/model.hpp"
#include "fracbio/quasi_polynomial.hpp"

namespace fracbio {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const noexcept { return v >= lo && v <= hi; }
    double width() const noexcept { return hi - lo; }
};

namespace detail {

struct OpenLoopCoefficients {
    double k1, k2, k3, tau;
};

inline OpenLoopCoefficients open_loop_form(const QuasiPolynomial& qp) {
    if (qp.exp_terms().size() != 1)
        throw StructureError("expected exactly one exponential term, got "
                             + std::to_string(qp.exp_terms().size()));
    const auto& t = qp.exp_terms().front();
    return {qp.p1(), qp.p0(), t.coeff, t.delay};
}

} // namespace detail

/// Positive ω with q(iω) = 0 for some delay: positive roots of
/// ω⁴ + (κ1² - 2κ2)ω² + (κ2² - κ3²), ascending.
inline std::vector<double> crossing_frequencies(const QuasiPolynomial& qp) {
    const auto [k1, k2, k3, tau] = detail::open_loop_form(qp);
    const double B = k1 * k1 - 2.0 * k2;
    const double C = k2 * k2 - k3 * k3;
    const double disc = B * B - 4.0 * C;
    if (disc < 0.0)
        return {};
    // cancellation-free pair of roots in w = ω²
    const double sq = std::sqrt(disc);
    const double qq = -0.5 * (B + std::copysign(sq, B));
    std::vector<double> w;
    if (qq != 0.0) {
        w.push_back(qq);
        w.push_back(C / qq);
    } else {
        w.push_back(0.0);
    }
    std::vector<double> omegas;
    for (double wi : w)
        if (wi > 0.0)
            omegas.push_back(std::sqrt(wi));
    std::sort(omegas.begin(), omegas.end());
    omegas.erase(std::unique(omegas.begin(), omegas.end()), omegas.end());
    return omegas;
}

struct CrossingCandidate {
    double omega0 = 0.0;
    double tau = 0.0;
    /// Both cos(ω0 τ) = (ω0² - κ2)/κ3 and sin(ω0 τ) = κ1 ω0/κ3 hold, so
    /// q(iω0) vanishes at this delay. The arctangent family alone also
    /// produces half-period points that satisfy neither.
    bool genuine = false;
};

/// τ_n = atan(κ1 ω0 / (ω0² - κ2))/ω0 + nπ/ω0 for n = 0..n_max, principal
/// arctangent; nonpositive values dropped.
inline std::vector<CrossingCandidate> critical_delays(const QuasiPolynomial& qp, double omega0, int n_max) {
    const auto [k1, k2, k3, tau] = detail::open_loop_form(qp);
    if (!(omega0 > 0.0))
        throw DomainError("crossing frequency must be positive");
    constexpr double pi = std::numbers::pi;
    const double base = std::atan(k1 * omega0 / (omega0 * omega0 - k2)) / omega0;
    std::vector<CrossingCandidate> out;
    for (int n = 0; n <= n_max; ++n) {
        const double t = base + n * pi / omega0;
        if (!(t > 0.0))
            continue;
        bool genuine = false;
        if (k3 != 0.0) {
            const double cos_err = std::cos(omega0 * t) - (omega0 * omega0 - k2) / k3;
            const double sin_err = std::sin(omega0 * t) - k1 * omega0 / k3;
            genuine = std::abs(cos_err) < 1e-8 && std::abs(sin_err) < 1e-8;
        }
        out.push_back({omega0, t, genuine});
    }
    return out;
}

struct CrossingSet {
    std::vector<double> omega0;
    std::vector<CrossingCandidate> tau_candidates;  // ascending in tau
};

inline CrossingSet analyze_crossings(const QuasiPolynomial& qp, int n_max) {
    CrossingSet set;
    set.omega0 = crossing_frequencies(qp);
    for (double w : set.omega0) {
        auto c = critical_delays(qp, w, n_max);
        set.tau_candidates.insert(set.tau_candidates.end(), c.begin(), c.end());
    }
    std::stable_sort(set.tau_candidates.begin(), set.tau_candidates.end(),
                     [](const auto& l, const auto& r) { return l.tau < r.tau; });
    return set;
}

/// sign(κ1² - 2κ2): +1 when the imaginary-axis pair moves right as τ grows.
inline int crossing_direction(const QuasiPolynomial& qp) {
    const auto [k1, k2, k3, tau] = detail::open_loop_form(qp);
    const double v = k1 * k1 - 2.0 * k2;
    return (v > 0.0) - (v < 0.0);
}

/// Direction of the pair crossing at ±iω0 itself: sign of P'(ω0²). Agrees
/// with crossing_direction whenever κ1² > 2κ2.
inline int crossing_direction_at(const QuasiPolynomial& qp, double omega0) {
    const auto [k1, k2, k3, tau] = detail::open_loop_form(qp);
    const double v = 2.0 * omega0 * omega0 + k1 * k1 - 2.0 * k2;
    return (v > 0.0) - (v < 0.0);
}

struct StabilityWindow {
    bool delay_independent = false;
    double upper = 0.0;  // stable for τ in (0, upper) when !delay_independent
};

/// Requires λ² + κ1 λ + (κ2 + κ3) to be Hurwitz (stable without delay).
inline StabilityWindow stability_window(const QuasiPolynomial& qp) {
    const auto [k1, k2, k3, tau] = detail::open_loop_form(qp);
    if (!(k1 > 0.0 && k2 + k3 > 0.0))
        throw DomainError("stability window undefined: quasi-polynomial is unstable at zero delay");
    const auto omegas = crossing_frequencies(qp);
    if (omegas.empty())
        return {true, 0.0};
    std::optional<double> first;
    for (double w : omegas) {
        // one full period holds a genuine crossing
        for (const auto& c : critical_delays(qp, w, 2)) {
            if (c.genuine && (!first || c.tau < *first))
                first = c.tau;
        }
    }
    if (!first)
        return {true, 0.0};
    return {false, *first};
}

namespace detail {

struct ContourWalk {
    double winding = 0.0;  // accumulated argument change
    double min_modulus = 0.0;
};

inline void walk_segment(const QuasiPolynomial& q, Complex z0, Complex z1, Complex f0, Complex f1,
                         int depth, ContourWalk& acc) {
    const double dphi = std::arg(f1 / f0);
    if (std::abs(dphi) > std::numbers::pi / 4.0 && depth < 48) {
        const Complex zm = 0.5 * (z0 + z1);
        const Complex fm = q(zm);
        acc.min_modulus = std::min(acc.min_modulus, std::abs(fm));
        if (acc.min_modulus == 0.0)
            return;
        walk_segment(q, z0, zm, f0, fm, depth + 1, acc);
        walk_segment(q, zm, z1, fm, f1, depth + 1, acc);
        return;
    }
    acc.winding += dphi;
}

/// Argument change of q along the closed polygon `corners`.
inline ContourWalk wind(const QuasiPolynomial& q, const std::vector<Complex>& corners, double max_step) {
    ContourWalk acc;
    acc.min_modulus = std::abs(q(corners.front()));
    for (std::size_t c = 0; c < corners.size(); ++c) {
        const Complex a = corners[c];
        const Complex b = corners[(c + 1) % corners.size()];
        const int n = std::max(4, static_cast<int>(std::ceil(std::abs(b - a) / max_step)));
        Complex z_prev = a;
        Complex f_prev = q(a);
        for (int i = 1; i <= n; ++i) {
            const Complex z = a + (b - a) * (static_cast<double>(i) / n);
            const Complex f = q(z);
            acc.min_modulus = std::min(acc.min_modulus, std::abs(f));
            if (acc.min_modulus == 0.0)
                return acc;
            walk_segment(q, z_prev, z, f_prev, f, 0, acc);
            z_prev = z;
            f_prev = f;
        }
    }
    return acc;
}

} // namespace detail

/// Number of roots with Re λ > -σ and |Im λ| <= omega_cap, by the winding
/// number of q around [-σ, R] × [-W, W]. R (and W, when the cap does not
/// bind) lies beyond the radius where λ² dominates, so no root is missed.
inline int count_roots_right_of(const QuasiPolynomial& qp, double sigma, double omega_cap = 100.0) {
    const QuasiPolynomial shifted = qp.shifted(sigma);
    const double radius = shifted.right_half_plane_root_radius();
    const double right = 1.1 * radius + 1e-3;
    const double height_free = right;
    const bool capped = omega_cap < height_free;
    const double step = std::min(right / 32.0, 0.25 / (1.0 + shifted.max_delay()));

    double jitter = 0.0;
    for (int attempt = 0; attempt <= 5; ++attempt) {
        const double left = jitter;
        const double top = capped ? omega_cap * (1.0 + jitter) : height_free;
        const std::vector<Complex> corners{{left, -top}, {right, -top}, {right, top}, {left, top}};
        const auto walk = detail::wind(shifted, corners, step);
        if (walk.min_modulus > 1e-9) {
            const double turns = walk.winding / (2.0 * std::numbers::pi);
            return static_cast<int>(std::lround(turns));
        }
        jitter = attempt == 0 ? 1e-8 : jitter * 10.0;
    }
    throw ContourError("root counting: contour passes through a root after 5 jittered retries (sigma = "
                       + std::to_string(sigma) + ")");
}

/// Largest real part among the roots of qp with |Im| <= omega_cap, located by
/// bisection on the root count to absolute tolerance `tol`.
inline double spectral_abscissa(const QuasiPolynomial& qp, double tol = 1e-10, double omega_cap = 100.0) {
    double hi = qp.right_half_plane_root_radius() + 1.0;
    double lo = -1.0;
    for (int i = 0; i < 60 && count_roots_right_of(qp, -lo, omega_cap) == 0; ++i) {
        hi = lo;
        lo *= 2.0;
    }
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (count_roots_right_of(qp, -mid, omega_cap) > 0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct BoundaryPoint {
    double h = 0.0;
    double k_r = 0.0;
    double omega = 0.0;  // generating frequency; 0 on the λ = 0 curve
};

struct BoundaryCurve {
    int n = 0;
    std::vector<BoundaryPoint> points;
};

struct SigmaRegion {
    double sigma = 0.0;
    Interval h_range;
    std::vector<BoundaryPoint> lambda0_curve;
    std::vector<BoundaryCurve> iw_curves;  // one entry per continuous segment
};

struct RegionOptions {
    double omega_max = 5.0;
    int n_min = 0;
    int n_max = 8;
    int omega_samples = 4000;
    /// The ω grid is logarithmic below this frequency and linear above.
    double omega_log_split = 0.1;
    double omega_min = 1e-4;
    int lambda0_samples = 400;
    /// Boundary points with |k_r| beyond this are dropped (near the poles of
    /// the parametrization).
    double k_r_limit = 10.0;
};

namespace detail {

inline std::vector<double> omega_grid(const RegionOptions& opt) {
    std::vector<double> grid;
    const int n = std::max(opt.omega_samples, 2);
    if (opt.omega_max <= opt.omega_log_split) {
        for (int i = 0; i < n; ++i)
            grid.push_back(opt.omega_min * std::pow(opt.omega_max / opt.omega_min, double(i) / (n - 1)));
        return grid;
    }
    const int n_log = n / 4;
    const int n_lin = n - n_log;
    for (int i = 0; i < n_log; ++i)
        grid.push_back(opt.omega_min * std::pow(opt.omega_log_split / opt.omega_min, double(i) / n_log));
    for (int i = 0; i < n_lin; ++i)
        grid.push_back(opt.omega_log_split + (opt.omega_max - opt.omega_log_split) * i / (n_lin - 1));
    return grid;
}

} // namespace detail

/// D-partition curves of the σ-shifted closed-loop quasi-polynomial in the
/// (h, k_r) plane: the λ = 0 curve and the λ = iω families indexed by n.
inline SigmaRegion sigma_region_boundaries(const LinearizedModel& lin, double sigma, Interval h_range,
                                           const RegionOptions& opt = {}) {
    if (!(sigma >= 0.0))
        throw DomainError("sigma must be nonnegative");
    const auto cl = closed_loop_coefficients(lin);
    if (cl.mu == 0.0)
        throw DegenerateError("controller has no authority on the characteristic function (mu = 0)");
    constexpr double pi = std::numbers::pi;

    SigmaRegion region;
    region.sigma = sigma;
    region.h_range = h_range;

    const double static_part = sigma * sigma - cl.eta1 * sigma + cl.eta2 + cl.eta3 * std::exp(cl.tau * sigma);
    const int m = std::max(opt.lambda0_samples, 2);
    for (int i = 0; i < m; ++i) {
        const double h = h_range.lo + h_range.width() * i / (m - 1);
        const double k = -static_part / (cl.mu * std::exp(h * sigma));
        if (std::abs(k) <= opt.k_r_limit)
            region.lambda0_curve.push_back({h, k, 0.0});
    }

    const auto omegas = detail::omega_grid(opt);
    for (int n = opt.n_min; n <= opt.n_max; ++n) {
        BoundaryCurve current{n, {}};
        double prev_theta = 0.0;
        auto flush = [&] {
            if (current.points.size() >= 2)
                region.iw_curves.push_back(std::move(current));
            current = BoundaryCurve{n, {}};
        };
        for (double w : omegas) {
            const double phi = sigma * sigma - w * w - cl.eta1 * sigma + cl.eta2
                               + cl.eta3 * std::cos(cl.tau * w) * std::exp(cl.tau * sigma);
            const double theta_c = cl.eta1 * w - 2.0 * w * sigma
                                   - cl.eta3 * std::sin(cl.tau * w) * std::exp(cl.tau * sigma);
            // acot(-Φ/Θ) on the (0, π) branch
            const double theta = theta_c > 0.0 ? std::atan2(theta_c, -phi) : std::atan2(-theta_c, phi);
            const double h = (theta + n * pi) / w;
            const double sin_hw = std::sin(h * w);
            const double k = theta_c / (cl.mu * sin_hw * std::exp(h * sigma));
            // the branch wraps where Θ changes sign: a new segment starts
            if (!current.points.empty() && std::abs(theta - prev_theta) > pi / 2.0)
                flush();
            prev_theta = theta;
            if (!(h > 0.0) || !h_range.contains(h) || !std::isfinite(k) || std::abs(k) > opt.k_r_limit) {
                flush();
                continue;
            }
            current.points.push_back({h, k, w});
        }
        flush();
    }
    return region;
}

/// True when every root of the closed loop at (h, k_r) has Re λ <= -σ.
inline bool classify_region_point(const LinearizedModel& lin, double k_r, double h, double sigma,
                                  double omega_cap = 100.0) {
    if (closed_loop_coefficients(lin).mu == 0.0)
        throw DegenerateError("controller has no authority on the characteristic function (mu = 0)");
    return count_roots_right_of(closed_loop_quasipolynomial(lin, k_r, h), sigma, omega_cap) == 0;
}

/// Boundary points that border the σ-stable set: some offset of ±dh in h or
/// ±dk in k_r classifies as σ-stable. Only gains inside k_range are probed.
inline std::vector<BoundaryPoint> stable_border(const LinearizedModel& lin, const SigmaRegion& region,
                                                Interval k_range, double dh = 1e-2, double dk = 1e-4,
                                                double omega_cap = 100.0) {
    std::vector<BoundaryPoint> out;
    auto probe = [&](const BoundaryPoint& p) {
        if (p.k_r < k_range.lo || p.k_r > k_range.hi)
            return;
        const double offs[4][2] = {{dh, 0.0}, {-dh, 0.0}, {0.0, dk}, {0.0, -dk}};
        for (const auto& o : offs) {
            const double h = p.h + o[0];
            if (h < 0.0)
                continue;
            if (classify_region_point(lin, p.k_r + o[1], h, region.sigma, omega_cap)) {
                out.push_back(p);
                return;
            }
        }
    };
    for (const auto& p : region.lambda0_curve)
        probe(p);
    for (const auto& c : region.iw_curves)
        for (const auto& p : c.points)
            probe(p);
    return out;
}

struct DecayOptimum {
    double sigma_star = 0.0;
    double h = 0.0;
    double k_r = 0.0;
    std::size_t cells = 0;  // grid cells surviving at sigma_star
};

struct DecaySearchOptions {
    int grid = 200;
    std::size_t min_cells = 3;
    double sigma_tol = 1e-4;
    /// Gain window scanned for the σ = 0 region. Defaults to [0, 1/x*], the
    /// gains that keep u = k_r·x inside [0, 1] at the equilibrium.
    std::optional<Interval> k_range;
    /// Extra passes that re-grid around the surviving cells and resume the
    /// bisection, refining the collapse point below the first grid's cell.
    int zoom_levels = 2;
    double omega_cap = 100.0;
};

namespace detail {

struct Cell {
    int i, j;
};

class RegionGrid {
public:
    RegionGrid(Interval h, Interval k, int n) : h_(h), k_(k), n_(n) {}

    double h_at(int i) const { return h_.lo + (i + 0.5) * h_.width() / n_; }
    double k_at(int j) const { return k_.lo + (j + 0.5) * k_.width() / n_; }
    int size() const { return n_; }

    std::vector<Cell> all() const {
        std::vector<Cell> v;
        v.reserve(std::size_t(n_) * n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
                v.push_back({i, j});
        return v;
    }

    /// Bounding box of `cells`, grown by `pad` cells on every side.
    std::pair<Interval, Interval> box(const std::vector<Cell>& cells, int pad) const {
        int i0 = n_, i1 = -1, j0 = n_, j1 = -1;
        for (const auto& c : cells) {
            i0 = std::min(i0, c.i);
            i1 = std::max(i1, c.i);
            j0 = std::min(j0, c.j);
            j1 = std::max(j1, c.j);
        }
        const double dh = h_.width() / n_;
        const double dk = k_.width() / n_;
        return {Interval{h_.lo + (i0 - pad) * dh, h_.lo + (i1 + 1 + pad) * dh},
                Interval{k_.lo + (j0 - pad) * dk, k_.lo + (j1 + 1 + pad) * dk}};
    }

private:
    Interval h_, k_;
    int n_;
};

} // namespace detail

/// Largest σ for which the σ-stable set of the delayed controller is still
/// nonempty on a grid over the σ = 0 region, and the centroid of the cells
/// that survive there.
inline DecayOptimum max_decay_rate(const LinearizedModel& lin, Interval h_range,
                                   const DecaySearchOptions& opt = {}) {
    if (closed_loop_coefficients(lin).mu == 0.0)
        throw DegenerateError("controller has no authority on the characteristic function (mu = 0)");
    const Interval k_range = opt.k_range.value_or(Interval{0.0, 1.0 / lin.equilibrium.x_star});

    auto stable = [&](const detail::RegionGrid& g, double sigma, const std::vector<detail::Cell>& cand) {
        std::vector<detail::Cell> out;
        for (const auto& c : cand)
            if (classify_region_point(lin, g.k_at(c.j), g.h_at(c.i), sigma, opt.omega_cap))
                out.push_back(c);
        return out;
    };

    detail::RegionGrid coarse(h_range, k_range, opt.grid);
    const auto region0 = stable(coarse, 0.0, coarse.all());
    if (region0.empty())
        throw DegenerateError("no stabilizing (h, k_r) on the requested window at sigma = 0");
    auto [hb, kb] = coarse.box(region0, 0);
    detail::RegionGrid grid(hb, kb, opt.grid);
    auto set_lo = stable(grid, 0.0, grid.all());
    if (set_lo.empty()) {
        grid = coarse;
        set_lo = region0;
    }

    double lo = 0.0;
    double best_sigma = 0.0;
    std::vector<detail::Cell> best_set = set_lo;
    auto record = [&](double s, const std::vector<detail::Cell>& cells) {
        if (!cells.empty() && s >= best_sigma) {
            best_sigma = s;
            best_set = cells;
        }
    };

    for (int level = 0; level <= opt.zoom_levels; ++level) {
        // bracket the threshold where fewer than min_cells survive
        double hi = std::max(2.0 * lo, 0.05);
        for (;;) {
            auto s = stable(grid, hi, set_lo);
            record(hi, s);
            if (s.size() < opt.min_cells)
                break;
            lo = hi;
            set_lo = std::move(s);
            hi *= 2.0;
            if (hi > 1e3)
                throw DegenerateError("decay search did not bracket the maximal sigma");
        }
        while (hi - lo > opt.sigma_tol) {
            const double mid = 0.5 * (lo + hi);
            auto s = stable(grid, mid, set_lo);
            record(mid, s);
            if (s.size() >= opt.min_cells) {
                lo = mid;
                set_lo = std::move(s);
            } else {
                hi = mid;
            }
        }
        record(lo, set_lo);
        if (level == opt.zoom_levels)
            break;
        auto [hz, kz] = grid.box(set_lo, 2);
        detail::RegionGrid finer(hz, kz, opt.grid);
        auto refined = stable(finer, lo, finer.all());
        if (refined.size() < opt.min_cells)
            break;
        grid = finer;
        set_lo = std::move(refined);
        best_set = set_lo;
        best_sigma = lo;
    }

    DecayOptimum out;
    out.sigma_star = best_sigma;
    out.cells = best_set.size();
    for (const auto& c : best_set) {
        out.h += grid.h_at(c.i);
        out.k_r += grid.k_at(c.j);
    }
    out.h /= double(best_set.size());
    out.k_r /= double(best_set.size());
    return out;
}

} // namespace fracbio
