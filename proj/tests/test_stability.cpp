#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include "fracbio/stability.hpp"
#include "oracles.hpp"

using namespace fracbio;
using Catch::Approx;

namespace {

constexpr double reference_x = 4.77631;
constexpr double pi = std::numbers::pi;

QuasiPolynomial reference_open_loop(double tau = 1.8) {
    auto m = zymomonas_params();
    m.tau = tau;
    const EquilibriumPoint eq{substrate_at(m, reference_x), reference_x, std::nullopt};
    return open_loop_quasipolynomial(linearize(m, eq, 0.15));
}

LinearizedModel reference_closed_loop() {
    auto m = zymomonas_params();
    m.tau = 7.0;
    const auto eq = solve_equilibrium_closed_loop(m, reference_x);
    return linearize(m, eq, *eq.u_star);
}

QuasiPolynomial with_delay(const QuasiPolynomial& q, double tau) {
    return {q.p1(), q.p0(), {{q.exp_terms().front().coeff, tau}}};
}

/// Random open-loop instance that is Hurwitz without delay and has a
/// crossing frequency.
QuasiPolynomial random_crossing_instance(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> k1d(0.05, 2.0), k2d(-0.5, 0.5), extra(0.05, 2.0);
    for (;;) {
        const double k1 = k1d(rng), k2 = k2d(rng);
        const double k3 = std::abs(k2) + extra(rng);
        if (k2 + k3 > 0.0)
            return {k1, k2, {{k3, 1.0}}};
    }
}

double first_genuine_tau(const QuasiPolynomial& q, double omega0) {
    for (const auto& c : critical_delays(q, omega0, 3))
        if (c.genuine)
            return c.tau;
    return std::nan("");
}

} // namespace

TEST_CASE("crossing frequencies", "[stability][crossing]") {
    SECTION("identified fermentation") {
        const QuasiPolynomial q(0.37985, 0.02011, {{0.09791, 1.8}});
        const double B = q.p1() * q.p1() - 2 * q.p0();
        const double C = q.p0() * q.p0() - 0.09791 * 0.09791;
        CHECK(B == Approx(0.10406).margin(1e-4));
        CHECK(C == Approx(-0.0091818).margin(1e-6));
        const auto w = crossing_frequencies(q);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == Approx(0.23876).margin(1e-4));
    }
    SECTION("weak delayed coupling admits no crossing") {
        const QuasiPolynomial q(1.0, 0.3, {{0.1, 2.0}});
        CHECK(crossing_frequencies(q).empty());
    }
    SECTION("structure error unless exactly one exponential term") {
        CHECK_THROWS_AS(crossing_frequencies(QuasiPolynomial(1.0, 0.3)), StructureError);
        CHECK_THROWS_AS(crossing_frequencies(QuasiPolynomial(1.0, 0.3, {{0.1, 1.0}, {0.2, 2.0}})),
                        StructureError);
    }
    SECTION("every frequency satisfies the trigonometric identity") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> k(-2.0, 2.0);
        int seen = 0;
        for (int draw = 0; draw < 500; ++draw) {
            const double k1 = k(rng), k2 = k(rng), k3 = k(rng);
            const QuasiPolynomial q(k1, k2, {{k3, 1.0}});
            for (double w : crossing_frequencies(q)) {
                const double a = k1 * w / k3, b = (w * w - k2) / k3;
                CHECK(std::abs(a * a + b * b - 1.0) < 1e-10);
                ++seen;
            }
        }
        CHECK(seen > 100);
    }
}

TEST_CASE("critical delays", "[stability][crossing]") {
    SECTION("identified fermentation, branch filtered") {
        const auto q = reference_open_loop();
        const double w0 = crossing_frequencies(q).front();
        const auto c = critical_delays(q, w0, 4);
        REQUIRE(c.size() >= 4);
        const double expected[] = {4.9608, 18.1187, 31.2767, 44.4346};
        const bool genuine[] = {true, false, true, false};
        for (int i = 0; i < 4; ++i) {
            CHECK(c[std::size_t(i)].tau == Approx(expected[i]).margin(1e-2));
            CHECK(c[std::size_t(i)].genuine == genuine[i]);
        }
        // the genuine ones really zero the quasi-polynomial on the axis
        for (const auto& cand : c) {
            const auto v = with_delay(q, cand.tau)(Complex{0.0, w0});
            if (cand.genuine) {
                CHECK(std::abs(v.real()) < 1e-8);
                CHECK(std::abs(v.imag()) < 1e-8);
            } else {
                CHECK(std::abs(v) > 1e-3);
            }
        }
    }
    SECTION("vanishing polynomial part gives multiples of pi/omega0") {
        const QuasiPolynomial q(0.0, 0.0, {{0.25, 1.0}});
        const auto w = crossing_frequencies(q);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == Approx(0.5));
        const auto c = critical_delays(q, w[0], 4);
        REQUIRE(c.size() == 4);  // n = 0 gives tau = 0, dropped
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i].tau == Approx(double(i + 1) * pi / w[0]));
    }
    SECTION("genuine crossings are spaced by a full period") {
        std::mt19937_64 rng(5);
        for (int draw = 0; draw < 50; ++draw) {
            const auto q = random_crossing_instance(rng);
            for (double w : crossing_frequencies(q)) {
                std::vector<double> g;
                for (const auto& c : critical_delays(q, w, 8))
                    if (c.genuine)
                        g.push_back(c.tau);
                REQUIRE(g.size() >= 3);
                for (std::size_t i = 1; i < g.size(); ++i)
                    CHECK(std::abs(g[i] - g[i - 1] - 2 * pi / w) < 1e-9);
            }
        }
    }
    SECTION("crossing set is sorted and nonnegative") {
        const auto set = analyze_crossings(reference_open_loop(), 6);
        REQUIRE(set.tau_candidates.size() == 7);
        for (std::size_t i = 0; i < set.tau_candidates.size(); ++i) {
            CHECK(set.tau_candidates[i].tau >= 0.0);
            if (i > 0)
                CHECK(set.tau_candidates[i].tau > set.tau_candidates[i - 1].tau);
        }
    }
}

TEST_CASE("crossing direction", "[stability][crossing]") {
    const auto q = reference_open_loop();
    CHECK(crossing_direction(q) == 1);
    CHECK(q.p1() * q.p1() - 2 * q.p0() == Approx(0.10406).margin(1e-4));
    CHECK(crossing_direction(QuasiPolynomial(2.0, 2.0, {{1.0, 1.0}})) == 0);

    SECTION("root tracking agrees with the crossing sign") {
        std::mt19937_64 rng(13);
        int with_formula = 0;
        for (int draw = 0; draw < 20; ++draw) {
            const auto base = random_crossing_instance(rng);
            const double w0 = crossing_frequencies(base).back();
            const double t0 = first_genuine_tau(base, w0);
            REQUIRE(std::isfinite(t0));
            const double before = spectral_abscissa(with_delay(base, t0 - 0.01), 1e-9);
            const double after = spectral_abscissa(with_delay(base, t0 + 0.01), 1e-9);
            const int tracked = (after > before) - (after < before);
            INFO("draw " << draw << " kappa1 " << base.p1() << " kappa2 " << base.p0());
            CHECK(crossing_direction_at(base, w0) == tracked);
            if (base.p1() * base.p1() > 2 * base.p0()) {
                CHECK(crossing_direction(base) == tracked);
                ++with_formula;
            }
        }
        CHECK(with_formula >= 10);
    }
}

TEST_CASE("stability window", "[stability][window]") {
    const auto q = reference_open_loop();
    const auto win = stability_window(q);
    CHECK_FALSE(win.delay_independent);
    CHECK(win.upper == Approx(4.9608).margin(1e-2));

    CHECK(stability_window(QuasiPolynomial(1.0, 0.5, {{0.0, 3.0}})).delay_independent);
    CHECK_THROWS_AS(stability_window(QuasiPolynomial(-0.1, 0.5, {{0.1, 1.0}})), DomainError);

    CHECK(count_roots_right_of(with_delay(q, 3.0), 0.0) == 0);
    CHECK(count_roots_right_of(with_delay(q, 7.0), 0.0) == 2);
}

TEST_CASE("root counting", "[stability][roots]") {
    SECTION("Hurwitz quadratic") {
        CHECK(count_roots_right_of(QuasiPolynomial(1.0, 0.5, {{0.0, 2.0}}), 0.0) == 0);
    }
    SECTION("quadratic counts follow the closed-form roots") {
        // roots -1 ± 2i and shifts across them
        const QuasiPolynomial q(2.0, 5.0);
        CHECK(count_roots_right_of(q, 0.5) == 0);
        CHECK(count_roots_right_of(q, 1.5) == 2);
        CHECK(count_roots_right_of(q, 1.5, 1.0) == 0);  // imaginary parts beyond the cap
        const QuasiPolynomial r(-1.0, -2.0);             // roots 2, -1
        CHECK(count_roots_right_of(r, 0.0) == 1);
        CHECK(count_roots_right_of(r, 1.5) == 2);
    }
    SECTION("roots on the contour trigger a jittered retry") {
        // ±i sits on the left edge at sigma = 0 and is excluded (Re λ > 0)
        CHECK(count_roots_right_of(QuasiPolynomial(0.0, 1.0), 0.0) == 0);
    }
    SECTION("spectral abscissa") {
        // (λ + 1)(λ + 2) with an inert delayed term
        CHECK(spectral_abscissa(QuasiPolynomial(3.0, 2.0, {{0.0, 1.0}}), 1e-10) == Approx(-1.0).margin(1e-8));
        // a double root is only located to about the square root of the contour floor
        CHECK(spectral_abscissa(QuasiPolynomial(2.0, 1.0), 1e-10) == Approx(-1.0).margin(1e-4));
    }
    SECTION("window and count agree on random instances") {
        std::mt19937_64 rng(17);
        for (int draw = 0; draw < 50; ++draw) {
            const auto base = random_crossing_instance(rng);
            const auto win = stability_window(base);
            REQUIRE_FALSE(win.delay_independent);
            INFO("draw " << draw << " tau0 " << win.upper);
            CHECK(count_roots_right_of(with_delay(base, 0.9 * win.upper), 0.0) == 0);
            CHECK(count_roots_right_of(with_delay(base, 1.1 * win.upper), 0.0) >= 2);
        }
    }
}

TEST_CASE("sigma-region boundaries", "[stability][regions]") {
    const auto lin = reference_closed_loop();
    const auto cl = closed_loop_coefficients(lin);

    auto nearest = [](const SigmaRegion& r, double h, double k) {
        double best = 1e300;
        auto visit = [&](const BoundaryPoint& p) { best = std::min(best, std::hypot(p.h - h, p.k_r - k)); };
        for (const auto& p : r.lambda0_curve)
            visit(p);
        for (const auto& c : r.iw_curves)
            for (const auto& p : c.points)
                visit(p);
        return best;
    };

    SECTION("sigma = 0 passes the reference border point c1") {
        const auto r = sigma_region_boundaries(lin, 0.0, {0.0, 12.0});
        CHECK(nearest(r, 2.89, 0.031) < 0.05);
    }
    SECTION("sigma = 0.05 passes c3") {
        const auto r = sigma_region_boundaries(lin, 0.05, {0.0, 12.0});
        CHECK(nearest(r, 5.58, 0.031) < 0.05);
    }
    SECTION("every emitted point is a root of the shifted quasi-polynomial") {
        for (double sigma : {0.0, 0.02, 0.05, 0.24}) {
            const auto r = sigma_region_boundaries(lin, sigma, {0.0, 12.0});
            REQUIRE_FALSE(r.lambda0_curve.empty());
            REQUIRE_FALSE(r.iw_curves.empty());
            for (const auto& p : r.lambda0_curve) {
                const auto q = closed_loop_quasipolynomial(lin, p.k_r, p.h);
                CHECK(std::abs(q(Complex{-sigma, 0.0})) < 1e-8);
            }
            for (const auto& c : r.iw_curves)
                for (const auto& p : c.points) {
                    CHECK(r.h_range.contains(p.h));
                    const auto q = closed_loop_quasipolynomial(lin, p.k_r, p.h);
                    CHECK(std::abs(q(Complex{-sigma, p.omega})) < 1e-8);
                }
        }
    }
    SECTION("no controller authority is degenerate") {
        auto dead = lin;
        dead.B.setZero();
        CHECK_THROWS_AS(sigma_region_boundaries(dead, 0.0, {0.0, 12.0}), DegenerateError);
        CHECK_THROWS_AS(classify_region_point(dead, 0.03, 3.0, 0.0), DegenerateError);
    }
    SECTION("negative sigma rejected") {
        CHECK_THROWS_AS(sigma_region_boundaries(lin, -0.01, {0.0, 12.0}), DomainError);
    }
    CHECK(cl.mu < 0.0);
}

TEST_CASE("classifying controller gains", "[stability][regions]") {
    const auto lin = reference_closed_loop();
    // c1 = (2.89, 0.031) lies on the lower gain border; the interior is above it
    CHECK(classify_region_point(lin, 0.034, 2.89, 0.0));
    CHECK_FALSE(classify_region_point(lin, 0.028, 2.89, 0.0));
    CHECK_FALSE(classify_region_point(lin, 0.031, 0.5, 0.0));
    CHECK_FALSE(classify_region_point(lin, 0.0, 5.0, 0.0));
    CHECK(classify_region_point(lin, 0.031, 4.2, 0.02));
    CHECK(classify_region_point(lin, 0.031, 5.7, 0.05));

    SECTION("sigma-stable sets are nested") {
        std::vector<std::pair<double, double>> pts;
        for (int i = 0; i < 30; ++i)
            for (int j = 0; j < 30; ++j)
                pts.emplace_back(12.0 * (i + 0.5) / 30, 0.05 * (j + 0.5) / 30);
        std::vector<bool> prev(pts.size(), true);
        for (double sigma : {0.0, 0.02, 0.05, 0.1, 0.2, 0.24}) {
            std::size_t count = 0;
            for (std::size_t p = 0; p < pts.size(); ++p) {
                const bool in = classify_region_point(lin, pts[p].second, pts[p].first, sigma);
                if (in) {
                    CHECK(prev[p]);
                    ++count;
                }
                prev[p] = in;
            }
            if (sigma == 0.0)
                CHECK(count > 20);
        }
    }
}

TEST_CASE("maximal decay rate", "[stability][decay]") {
    const auto lin = reference_closed_loop();
    const auto opt = max_decay_rate(lin, {0.0, 12.0});
    CHECK(opt.sigma_star == Approx(0.24).margin(0.02));
    CHECK(opt.h == Approx(7.38).margin(0.1));
    CHECK(opt.k_r == Approx(0.031).margin(0.005));
    CHECK(opt.cells >= 1);

    SECTION("nothing survives beyond the optimum") {
        std::size_t survivors = 0;
        for (int i = 0; i < 40; ++i)
            for (int j = 0; j < 40; ++j)
                survivors += classify_region_point(lin, 0.01 + 0.03 * (j + 0.5) / 40, 2.0 + 10.0 * (i + 0.5) / 40,
                                                   opt.sigma_star + 0.01);
        CHECK(survivors == 0);
    }
    SECTION("linear closed loop decays at the certified rate") {
        const auto dev = oracle::linear_dde_biomass(lin, opt.k_r, opt.h, {0.05, 0.05}, 200.0, 0.005);
        const double rate = oracle::envelope_rate(dev, 0.005, std::size_t(40.0 / 0.005), dev.size());
        INFO("rate " << rate << " sigma* " << opt.sigma_star);
        CHECK(rate >= 0.9 * opt.sigma_star);
    }
    SECTION("empty sigma = 0 region is an error") {
        CHECK_THROWS_AS(max_decay_rate(lin, {0.0, 1.0}), DegenerateError);
    }
}
