#pragma once

// Fixed-step method-of-steps integration of the delayed bioreactor model.
// Classical RK4 on a uniform grid; delayed values come from cubic Hermite
// interpolation of the completed steps (nodal values and slopes), with a
// constant pre-history.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fracbio/error.hpp"
#include "fracbio/model.hpp"
#include "fracbio/stability.hpp"

namespace fracbio {

struct ConstantInput {
    double D = 0.0;
};

/// u(t) = k_r · x(t - h)
struct DelayedProportional {
    double k_r = 0.0;
    double h = 0.0;
};

using BasicLaw = std::variant<ConstantInput, DelayedProportional>;

/// `first` on t < switch_time, `second` afterwards.
struct ScheduledLaw {
    BasicLaw first;
    BasicLaw second;
    double switch_time = 0.0;
};

using ControlLaw = std::variant<ConstantInput, DelayedProportional, ScheduledLaw>;

namespace detail {

inline void validate_basic(const BasicLaw& law) {
    std::visit(
        [](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConstantInput>) {
                if (!(l.D >= 0.0 && l.D <= 1.0))
                    throw DomainError("constant input must lie in [0, 1]");
            } else {
                if (!(l.h >= 0.0) || !std::isfinite(l.h) || !std::isfinite(l.k_r))
                    throw DomainError("delayed proportional law needs finite k_r and h >= 0");
            }
        },
        law);
}

inline double basic_delay(const BasicLaw& law) {
    if (const auto* p = std::get_if<DelayedProportional>(&law))
        return p->h;
    return 0.0;
}

} // namespace detail

inline void validate(const ControlLaw& law) {
    if (const auto* s = std::get_if<ScheduledLaw>(&law)) {
        detail::validate_basic(s->first);
        detail::validate_basic(s->second);
        if (!(s->switch_time > 0.0))
            throw DomainError("scheduled law switch time must be positive");
        return;
    }
    std::visit(
        [](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (!std::is_same_v<T, ScheduledLaw>)
                detail::validate_basic(BasicLaw{l});
        },
        law);
}

/// Controller delays that are positive (each needs its own step bound).
inline std::vector<double> controller_delays(const ControlLaw& law) {
    std::vector<double> out;
    auto push = [&](double h) {
        if (h > 0.0)
            out.push_back(h);
    };
    if (const auto* s = std::get_if<ScheduledLaw>(&law)) {
        push(detail::basic_delay(s->first));
        push(detail::basic_delay(s->second));
    } else if (const auto* p = std::get_if<DelayedProportional>(&law)) {
        push(p->h);
    }
    return out;
}

/// Constant pre-history on [-max_delay, 0].
struct HistorySpec {
    double s_init = 0.0;
    double x_init = 0.0;
};

class Trajectory {
public:
    Trajectory() = default;

    /// Nodal samples on the uniform grid t_k = k·dt with the slopes used by
    /// the Hermite dense output.
    Trajectory(double dt, HistorySpec history, std::vector<double> s, std::vector<double> x,
               std::vector<double> u, std::vector<double> ds, std::vector<double> dx)
        : dt_(dt), history_(history), s_(std::move(s)), x_(std::move(x)), u_(std::move(u)),
          ds_(std::move(ds)), dx_(std::move(dx)) {
        const auto n = s_.size();
        if (!(dt_ > 0.0) || n == 0 || x_.size() != n || u_.size() != n || ds_.size() != n || dx_.size() != n)
            throw InputError("trajectory arrays must be nonempty and of equal length");
    }

    double dt() const noexcept { return dt_; }
    std::size_t size() const noexcept { return s_.size(); }
    double time(std::size_t k) const noexcept { return double(k) * dt_; }
    double t_end() const noexcept { return time(size() - 1); }
    const HistorySpec& history() const noexcept { return history_; }

    const std::vector<double>& s() const noexcept { return s_; }
    const std::vector<double>& x() const noexcept { return x_; }
    const std::vector<double>& u() const noexcept { return u_; }
    const std::vector<double>& ds() const noexcept { return ds_; }
    const std::vector<double>& dx() const noexcept { return dx_; }

    std::size_t state_clamps = 0;
    std::size_t control_clamps = 0;

    /// (s, x) at any t <= t_end; the constant pre-history for t <= 0.
    std::array<double, 2> at(double t) const {
        if (t <= 0.0)
            return {history_.s_init, history_.x_init};
        if (t > t_end() * (1.0 + 1e-12))
            throw DomainError("trajectory queried past its end at t = " + std::to_string(t));
        return {hermite(s_, ds_, t, s_.size() - 1), hermite(x_, dx_, t, x_.size() - 1)};
    }

    /// Interpolated x(t) using only intervals whose right slope is known
    /// (nodes 0..known). Used while the trajectory is still being built.
    double x_at(double t, std::size_t known) const {
        if (t <= 0.0)
            return history_.x_init;
        return hermite(x_, dx_, t, known);
    }

private:
    double hermite(const std::vector<double>& y, const std::vector<double>& dy, double t,
                   std::size_t known) const {
        std::size_t j = static_cast<std::size_t>(t / dt_);
        if (j >= known)
            j = known == 0 ? 0 : known - 1;
        if (known == 0)
            return y[0];
        const double th = (t - double(j) * dt_) / dt_;
        const double th2 = th * th;
        const double th3 = th2 * th;
        const double h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
        const double h10 = th3 - 2.0 * th2 + th;
        const double h01 = -2.0 * th3 + 3.0 * th2;
        const double h11 = th3 - th2;
        return h00 * y[j] + h10 * dt_ * dy[j] + h01 * y[j + 1] + h11 * dt_ * dy[j + 1];
    }

    friend Trajectory simulate(const ModelParams&, const ControlLaw&, const HistorySpec&, double, double);

    double dt_ = 0.0;
    HistorySpec history_{};
    std::vector<double> s_, x_, u_, ds_, dx_;
};

/// Integrates the model from a constant history up to t_f with step dt.
inline Trajectory simulate(const ModelParams& m, const ControlLaw& law, const HistorySpec& hist, double t_f,
                           double dt) {
    m.validate();
    validate(law);
    if (!(hist.s_init >= 0.0) || !(hist.x_init >= 0.0))
        throw DomainError("initial history must be nonnegative");
    if (!(t_f > 0.0) || !std::isfinite(t_f))
        throw DomainError("final time must be positive");
    if (!(dt > 0.0))
        throw StepSizeError("step size must be positive");
    auto check_delay = [dt](double delay, const char* what) {
        if (delay > 0.0 && dt > delay / 4.0 * (1.0 + 1e-12))
            throw StepSizeError(std::string("step size ") + std::to_string(dt) + " exceeds a quarter of the "
                                + what + " " + std::to_string(delay));
    };
    check_delay(m.tau, "state delay");
    for (double h : controller_delays(law))
        check_delay(h, "controller delay");

    const auto n = static_cast<std::size_t>(std::ceil(t_f / dt - 1e-9));
    Trajectory tr;
    tr.dt_ = dt;
    tr.history_ = hist;
    tr.s_.assign(n + 1, 0.0);
    tr.x_.assign(n + 1, 0.0);
    tr.u_.assign(n + 1, 0.0);
    tr.ds_.assign(n + 1, 0.0);
    tr.dx_.assign(n + 1, 0.0);
    tr.s_[0] = hist.s_init;
    tr.x_[0] = hist.x_init;

    // slopes are known for nodes 0..known-1 while step `known-1` is running
    std::size_t known = 0;

    auto basic_input = [&](const BasicLaw& l, double t, double x_now) {
        if (const auto* c = std::get_if<ConstantInput>(&l))
            return c->D;
        const auto& p = std::get<DelayedProportional>(l);
        const double xd = p.h == 0.0 ? x_now : tr.x_at(t - p.h, known - 1);
        return p.k_r * xd;
    };
    auto raw_input = [&](double t, double x_now) {
        return std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, ScheduledLaw>)
                    return basic_input(t < l.switch_time ? l.first : l.second, t, x_now);
                else
                    return basic_input(BasicLaw{l}, t, x_now);
            },
            law);
    };
    auto rhs = [&](double t, double s, double x) {
        const double sc = std::max(s, 0.0);
        const double xc = std::max(x, 0.0);
        const double xd = m.tau == 0.0 ? xc : std::max(tr.x_at(t - m.tau, known - 1), 0.0);
        const double u = std::clamp(raw_input(t, xc), 0.0, 1.0);
        return vector_field(m, sc, xc, xd, u);
    };

    for (std::size_t k = 0;; ++k) {
        const double t = double(k) * dt;
        const double s = tr.s_[k];
        const double x = tr.x_[k];
        known = k + 1;
        const auto k1 = rhs(t, s, x);
        tr.ds_[k] = k1[0];
        tr.dx_[k] = k1[1];
        const double u_raw = raw_input(t, x);
        tr.u_[k] = std::clamp(u_raw, 0.0, 1.0);
        if (tr.u_[k] != u_raw)
            ++tr.control_clamps;
        if (k == n)
            break;

        const auto k2 = rhs(t + 0.5 * dt, s + 0.5 * dt * k1[0], x + 0.5 * dt * k1[1]);
        const auto k3 = rhs(t + 0.5 * dt, s + 0.5 * dt * k2[0], x + 0.5 * dt * k2[1]);
        const auto k4 = rhs(t + dt, s + dt * k3[0], x + dt * k3[1]);
        double s_next = s + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        double x_next = x + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        if (!std::isfinite(s_next) || !std::isfinite(x_next))
            throw BlowUpError("state became nonfinite after t = " + std::to_string(t), t);
        if (s_next < 0.0 || x_next < 0.0) {
            ++tr.state_clamps;
            s_next = std::max(s_next, 0.0);
            x_next = std::max(x_next, 0.0);
        }
        tr.s_[k + 1] = s_next;
        tr.x_[k + 1] = x_next;
    }
    return tr;
}

/// Exponential decay rate of the deviation from `eq`, from a least-squares
/// fit of log‖z(t) - z*‖ through the local maxima of the deviation inside
/// `window`, or through every sample when the deviation decreases without
/// oscillating. The window is cut at the first sample at or below
/// `noise_floor`, where rounding takes over.
inline double decay_estimate(const Trajectory& tr, const EquilibriumPoint& eq, Interval window,
                             double noise_floor = 1e-10) {
    if (!(window.lo >= 0.0) || window.hi > tr.t_end() * (1.0 + 1e-12) || !(window.hi > window.lo))
        throw DomainError("decay window must lie inside the trajectory span");
    std::vector<double> dev(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k)
        dev[k] = std::hypot(tr.s()[k] - eq.s_star, tr.x()[k] - eq.x_star);

    std::size_t first = tr.size(), last = 0;  // usable samples [first, last)
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double t = tr.time(k);
        if (t < window.lo)
            continue;
        if (t > window.hi || dev[k] <= noise_floor)
            break;
        first = std::min(first, k);
        last = k + 1;
    }

    std::vector<double> ts, logs;
    bool monotone = true;
    for (std::size_t k = first; k < last; ++k) {
        if (k + 1 < last)
            monotone = monotone && dev[k + 1] < dev[k];
        if (k > first && k + 1 < last && dev[k] > dev[k - 1] && dev[k] >= dev[k + 1]) {
            ts.push_back(tr.time(k));
            logs.push_back(std::log(dev[k]));
        }
    }
    // a non-oscillatory decay is its own envelope
    if (ts.size() < 3 && monotone && last >= first + 3) {
        ts.clear();
        logs.clear();
        for (std::size_t k = first; k < last; ++k) {
            ts.push_back(tr.time(k));
            logs.push_back(std::log(dev[k]));
        }
    }
    if (ts.size() < 3)
        throw DegenerateError("decay estimate needs at least 3 local maxima of the deviation, found "
                              + std::to_string(ts.size()));
    const double n = double(ts.size());
    double mt = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i];
        ml += logs[i];
    }
    mt /= n;
    ml /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        sxy += (ts[i] - mt) * (logs[i] - ml);
        sxx += (ts[i] - mt) * (ts[i] - mt);
    }
    return -sxy / sxx;
}

/// time,s,x,u, one row per grid node.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
    os << "time,s,x,u\n";
    char buf[128];
    for (std::size_t k = 0; k < tr.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.10g,%.17g,%.17g,%.17g\n", tr.time(k), tr.s()[k], tr.x()[k],
                      tr.u()[k]);
        os << buf;
    }
}

inline void write_phase_csv(std::ostream& os, const Trajectory& tr) {
    os << "s,x\n";
    char buf[96];
    for (std::size_t k = 0; k < tr.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", tr.s()[k], tr.x()[k]);
        os << buf;
    }
}

} // namespace fracbio
