#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "fracbio/dde.hpp"
#include "fracbio/fit.hpp"
#include "oracles.hpp"

using namespace fracbio;
using Catch::Approx;

namespace {

ModelParams at_tau(double tau) {
    auto m = zymomonas_params();
    m.tau = tau;
    return m;
}

double deviation(const Trajectory& tr, std::size_t k, const EquilibriumPoint& eq) {
    return std::hypot(tr.s()[k] - eq.s_star, tr.x()[k] - eq.x_star);
}

/// Trajectory sampled from closed-form curves with analytic slopes.
Trajectory from_closed_form(double dt, double t_f, const std::function<std::array<double, 4>(double)>& f) {
    const auto n = static_cast<std::size_t>(std::llround(t_f / dt)) + 1;
    std::vector<double> s(n), x(n), u(n, 0.0), ds(n), dx(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto v = f(double(k) * dt);
        s[k] = v[0];
        x[k] = v[1];
        ds[k] = v[2];
        dx[k] = v[3];
    }
    const auto v0 = f(0.0);
    return Trajectory(dt, {v0[0], v0[1]}, s, x, u, ds, dx);
}

} // namespace

TEST_CASE("identified parameters against the fermentation record", "[dde]") {
    const auto tr = simulate(zymomonas_params(), ConstantInput{0.15}, {10.0, 0.1}, 80.0, 0.01);
    const auto ds = zymomonas_dataset();
    int within = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double x = tr.at(ds.times[i])[1];
        if (std::abs(x - ds.biomass[i]) <= ds.biomass_err[i])
            ++within;
    }
    INFO("biomass samples inside the error bars: " << within);
    // count observed with the identified parameters
    CHECK(within >= 10);
    CHECK(tr.state_clamps == 0);
    CHECK(tr.control_clamps == 0);
}

TEST_CASE("biomass-free subspace is invariant", "[dde]") {
    const auto m = zymomonas_params();
    const double D = 0.15;
    const auto tr = simulate(m, ConstantInput{D}, {3.0, 0.0}, 40.0, 0.01);
    for (double v : tr.x())
        CHECK(v == 0.0);
    const auto ref = oracle::rk4(
        [&](double, const std::vector<double>& y) {
            return std::vector<double>{-m.a * std::pow(y[0], m.beta) + D * (m.s0 - y[0])};
        },
        {3.0}, 40.0, 0.01);
    CHECK(tr.s().back() == Approx(ref[0]).epsilon(1e-12));
}

TEST_CASE("fourth-order convergence", "[dde][property]") {
    // τ = 1.8 is a multiple of every step, so breakpoints sit on nodes
    const auto m = zymomonas_params();
    auto end_state = [&](double dt) {
        const auto tr = simulate(m, ConstantInput{0.15}, {10.0, 0.1}, 36.0, dt);
        return std::array<double, 2>{tr.s().back(), tr.x().back()};
    };
    const auto a = end_state(0.04), b = end_state(0.02), c = end_state(0.01);
    const double e1 = std::hypot(a[0] - b[0], a[1] - b[1]);
    const double e2 = std::hypot(b[0] - c[0], b[1] - c[1]);
    const double order = std::log2(e1 / e2);
    INFO("successive differences " << e1 << ", " << e2 << "; order " << order);
    CHECK(order >= 3.5);
}

TEST_CASE("open-loop behaviour around the stability window", "[dde]") {
    const auto eq = solve_equilibrium_open_loop(zymomonas_params(), 0.15).front();
    SECTION("delays inside the window settle at the equilibrium") {
        for (double tau : {1.0, 2.0, 3.0, 4.0}) {
            const auto tr = simulate(at_tau(tau), ConstantInput{0.15}, {1.85, 4.9}, 400.0, 0.01);
            INFO("tau " << tau);
            CHECK(tr.s().back() == Approx(eq.s_star).epsilon(5e-3));
            CHECK(tr.x().back() == Approx(eq.x_star).epsilon(5e-3));
        }
    }
    SECTION("beyond the window the deviation grows") {
        const auto tr = simulate(at_tau(7.0), ConstantInput{0.15}, {1.85, 4.9}, 400.0, 0.01);
        CHECK(deviation(tr, tr.size() - 1, eq) > deviation(tr, 0, eq));
    }
}

TEST_CASE("zero controller delay equals the undelayed feedback ODE", "[dde][property]") {
    auto m = zymomonas_params();
    m.tau = 0.0;
    const double k = 0.031;
    const auto tr = simulate(m, DelayedProportional{k, 0.0}, {1.85, 4.9}, 50.0, 0.01);
    auto f = [&](double, const std::vector<double>& y) {
        const double u = std::clamp(k * y[1], 0.0, 1.0);
        const auto r = oracle::rhs(m, y[0], y[1], y[1], u);
        return std::vector<double>{r[0], r[1]};
    };
    std::vector<double> y{1.85, 4.9};
    for (std::size_t i = 1; i < tr.size(); i += 100) {
        // restart-free comparison at every hundredth node
        const auto ref = oracle::rk4(f, {1.85, 4.9}, tr.time(i), 0.01);
        CHECK(std::abs(tr.s()[i] - ref[0]) < 1e-9);
        CHECK(std::abs(tr.x()[i] - ref[1]) < 1e-9);
    }
}

TEST_CASE("states stay nonnegative and clamps are counted", "[dde][property]") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> hist(0.0, 12.0), gain(0.0, 0.5);
    for (int draw = 0; draw < 20; ++draw) {
        auto m = oracle::random_params(rng);
        m.tau = 1.0;
        m.alpha = std::clamp(m.alpha, 0.5, 1.0);
        try {
            const auto tr = simulate(m, DelayedProportional{gain(rng), 0.5}, {hist(rng), hist(rng)}, 30.0, 0.01);
            for (std::size_t k = 0; k < tr.size(); ++k) {
                CHECK(tr.s()[k] >= 0.0);
                CHECK(tr.x()[k] >= 0.0);
                CHECK(tr.u()[k] >= 0.0);
                CHECK(tr.u()[k] <= 1.0);
            }
        } catch (const BlowUpError&) {
            // superlinear growth is a legitimate outcome for random draws
        }
    }
}

TEST_CASE("control saturation", "[dde]") {
    const auto tr = simulate(at_tau(1.8), DelayedProportional{5.0, 1.0}, {2.0, 4.0}, 20.0, 0.01);
    CHECK(tr.control_clamps > 0);
    for (double u : tr.u()) {
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
    }
}

TEST_CASE("scheduled law switches once", "[dde]") {
    const ScheduledLaw law{ConstantInput{0.15}, DelayedProportional{0.031, 2.0}, 10.0};
    const auto tr = simulate(at_tau(7.0), law, {1.94, 4.77}, 20.0, 0.01);
    for (std::size_t k = 0; k < tr.size(); ++k) {
        if (tr.time(k) < 10.0 - 1e-9)
            CHECK(tr.u()[k] == 0.15);
        else if (tr.time(k) > 12.0)
            CHECK(tr.u()[k] == Approx(0.031 * tr.at(tr.time(k) - 2.0)[1]).epsilon(1e-12));
    }
}

TEST_CASE("simulation input validation", "[dde]") {
    const auto m = at_tau(1.8);
    CHECK_THROWS_AS(simulate(m, ConstantInput{0.15}, {1.0, 1.0}, 10.0, 0.5), StepSizeError);
    CHECK_THROWS_AS(simulate(m, DelayedProportional{0.03, 0.1}, {1.0, 1.0}, 10.0, 0.05), StepSizeError);
    CHECK_THROWS_AS(simulate(m, ConstantInput{0.15}, {1.0, 1.0}, 10.0, 0.0), StepSizeError);
    CHECK_THROWS_AS(simulate(m, ConstantInput{1.5}, {1.0, 1.0}, 10.0, 0.01), DomainError);
    CHECK_THROWS_AS(simulate(m, ConstantInput{0.1}, {-1.0, 1.0}, 10.0, 0.01), DomainError);
    CHECK_THROWS_AS(simulate(m, ConstantInput{0.1}, {1.0, 1.0}, 0.0, 0.01), DomainError);
    CHECK_THROWS_AS(simulate(m, DelayedProportional{0.03, -1.0}, {1.0, 1.0}, 10.0, 0.01), DomainError);
    CHECK_THROWS_AS(simulate(m, ScheduledLaw{ConstantInput{0.1}, ConstantInput{0.2}, 0.0}, {1.0, 1.0}, 10.0, 0.01),
                    DomainError);
}

TEST_CASE("finite-time blow-up is reported", "[dde]") {
    // x' ≈ (c s0^β - d) x² while the delayed consumption still sees the history
    const ModelParams m{0.01, 0.01, 1.0, 0.1, 0.1, 2.0, 0.5, 10.0, 1.0};
    try {
        simulate(m, ConstantInput{0.5}, {10.0, 1.0}, 2.0, 0.001);
        FAIL("expected blow-up");
    } catch (const BlowUpError& e) {
        CHECK(e.last_valid_time() > 0.2);
        CHECK(e.last_valid_time() < 0.5);
    }
}

TEST_CASE("dense output", "[dde]") {
    const auto tr = simulate(at_tau(1.8), ConstantInput{0.15}, {10.0, 0.1}, 10.0, 0.01);
    CHECK(tr.at(-1.0)[0] == 10.0);
    CHECK(tr.at(-1.0)[1] == 0.1);
    CHECK(tr.at(tr.time(250))[1] == Approx(tr.x()[250]).epsilon(1e-14));
    const auto fine = simulate(at_tau(1.8), ConstantInput{0.15}, {10.0, 0.1}, 10.0, 0.0025);
    // off-node interpolant against a finer integration
    for (double t : {2.345, 5.555, 9.001})
        CHECK(tr.at(t)[1] == Approx(fine.at(t)[1]).epsilon(1e-8));
    CHECK_THROWS_AS(tr.at(10.5), DomainError);
}

TEST_CASE("decay estimate", "[dde][decay]") {
    const EquilibriumPoint origin{0.0, 0.0, std::nullopt};
    SECTION("monotone exponential") {
        const auto tr = from_closed_form(0.01, 60.0, [](double t) {
            const double v = std::exp(-0.1 * t);
            return std::array<double, 4>{v, 0.0, -0.1 * v, 0.0};
        });
        CHECK(decay_estimate(tr, origin, {5.0, 55.0}) == Approx(0.1).margin(1e-3));
    }
    SECTION("damped oscillation") {
        const auto tr = from_closed_form(0.01, 100.0, [](double t) {
            const double e = std::exp(-0.1 * t);
            return std::array<double, 4>{e * std::cos(t), 0.5 * e * std::sin(t),
                                         e * (-0.1 * std::cos(t) - std::sin(t)),
                                         0.5 * e * (-0.1 * std::sin(t) + std::cos(t))};
        });
        CHECK(decay_estimate(tr, origin, {10.0, 90.0}) == Approx(0.1).margin(1e-3));
    }
    SECTION("resting trajectory is degenerate") {
        const auto m = at_tau(1.8);
        const auto eq = solve_equilibrium_open_loop(m, 0.15).front();
        const auto tr = simulate(m, ConstantInput{0.15}, {eq.s_star, eq.x_star}, 50.0, 0.01);
        CHECK_THROWS_AS(decay_estimate(tr, eq, {10.0, 50.0}), DegenerateError);
    }
    SECTION("window outside the span") {
        const auto tr = simulate(at_tau(1.8), ConstantInput{0.15}, {2.0, 4.0}, 10.0, 0.01);
        CHECK_THROWS_AS(decay_estimate(tr, origin, {5.0, 20.0}), DomainError);
    }
}

TEST_CASE("trajectory CSV export", "[dde][io]") {
    const auto tr = simulate(at_tau(1.8), ConstantInput{0.15}, {10.0, 0.1}, 1.0, 0.01);
    std::ostringstream csv, phase;
    write_trajectory_csv(csv, tr);
    write_phase_csv(phase, tr);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "time,s,x,u");
    std::size_t rows = 0;
    while (std::getline(in, line))
        ++rows;
    CHECK(rows == tr.size());
    CHECK(phase.str().rfind("s,x\n", 0) == 0);
    CHECK(csv.str().find("\n0.5,") != std::string::npos);
}
