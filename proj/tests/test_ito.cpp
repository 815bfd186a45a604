#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gexpect/ito.hpp"

using namespace gexpect;

namespace {

const GParams kBand(1.0, 2.0);

template <class F>
ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Numeric;
}

ControlProcess switching(std::size_t steps) {
    std::vector<double> br(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) br[i] = static_cast<double>(i) / static_cast<double>(steps);
    return ControlProcess::bang_bang(kBand, br, std::vector<StepRule>(steps, [](const PathView& v) {
                                         return -v.level();
                                     }));
}

std::vector<ControlProcess> family() {
    return {ControlProcess::constant(kBand, 1.0), ControlProcess::constant(kBand, 2.0), switching(16)};
}

PathMatrix k_of_one(const PathBundle& b) {
    return k_process(PathMatrix(b.n_paths(), b.grid.n_steps(), 1.0), b, kBand);
}

PathMatrix minus_t(const PathBundle& b) {
    PathMatrix x(b.n_paths(), b.grid.n_steps() + 1);
    for (std::size_t p = 0; p < x.n_paths(); ++p)
        for (std::size_t k = 0; k <= b.grid.n_steps(); ++k) x(p, k) = -b.grid.time(k);
    return x;
}

const std::vector<std::pair<double, double>> kPairs{{0.0, 0.5}, {0.5, 1.0}, {0.0, 1.0}};

}  // namespace

TEST_CASE("left-point stochastic integrals") {
    PathMatrix b(1, 4), one(1, 3, 1.0), level(1, 4);
    const double path[] = {0.0, 1.0, -1.0, 2.0};
    for (int k = 0; k < 4; ++k) b(0, k) = level(0, k) = path[k];
    const auto i1 = stochastic_integral(one, b);
    CHECK(i1(0, 3) == 2.0);
    // sum B_k (B_{k+1} - B_k) = 0 * 1 + 1 * (-2) + (-1) * 3
    CHECK(stochastic_integral(level, b)(0, 3) == -5.0);
    CHECK(kind_of([&] { stochastic_integral(PathMatrix(1, 2), b); }) == ErrorKind::Usage);
}

TEST_CASE("dyadic quadratic variation") {
    PathMatrix b(1, 5);
    const double path[] = {0.0, 1.0, 3.0, 2.0, 2.0};
    for (int k = 0; k < 5; ++k) b(0, k) = path[k];
    const auto q0 = qn_quadratic_variation(b, 0);
    CHECK(q0(0, 2) == 9.0);
    CHECK(q0(0, 4) == 4.0);
    const auto q1 = qn_quadratic_variation(b, 1);
    // blocks [0, 2] and [2, 4]: 9 + (2 - 3)^2
    CHECK(q1(0, 4) == 10.0);
    CHECK(q1(0, 3) == 10.0);
    const auto q2 = qn_quadratic_variation(b, 2);
    CHECK(q2(0, 4) == realized_quadratic_variation(b)(0, 4));
    CHECK(kind_of([&] { qn_quadratic_variation(b, 3); }) == ErrorKind::Usage);
    CHECK(qn_lambda(b, 1)(0, 3) == 2.0 * (2.0 - 3.0));
}

TEST_CASE("discrete identity Q^n = int lambda^n dB + realised QV") {
    const auto bundle = simulate(switching(32), TimeGrid(1.0, 32), 200, 17);
    const auto realized = realized_quadratic_variation(bundle.b);
    for (int level = 0; level <= 5; ++level) {
        const auto q = qn_quadratic_variation(bundle.b, level);
        const auto rhs = stochastic_integral(qn_lambda(bundle.b, level), bundle.b);
        double worst = 0.0;
        for (std::size_t p = 0; p < 200; ++p)
            for (std::size_t k = 0; k <= 32; ++k)
                worst = std::max(worst, std::abs(q(p, k) - rhs(p, k) - realized(p, k)) / std::max(1.0, q(p, k)));
        CHECK(worst <= 1e-13);
    }
}

TEST_CASE("K(1) under the constant controls") {
    const TimeGrid grid(1.0, 8);
    const auto hi = simulate(ControlProcess::constant(kBand, 2.0), grid, 5, 1);
    const auto lo = simulate(ControlProcess::constant(kBand, 1.0), grid, 5, 1);
    const auto k_hi = k_of_one(hi), k_lo = k_of_one(lo);
    for (std::size_t j = 0; j <= 8; ++j) {
        CHECK(std::abs(k_hi(2, j)) <= 1e-14);
        CHECK(k_lo(2, j) == doctest::Approx(-3.0 * grid.time(j)));
    }
    CHECK(kind_of([&] { k_process(PathMatrix(5, 7), hi, kBand); }) == ErrorKind::Usage);
    const auto lvl = sample_steps(hi, [](const PathView& v) { return v.level(); });
    CHECK(lvl(3, 4) == hi.b(3, 4));
}

TEST_CASE("martingale decomposition of B_T^2") {
    const auto sq = CylinderFunctional::terminal(1.0, [](double x) { return x * x; }, {400.0, 40.0, 20.0});
    const PdeGrid grid{SpaceGrid(-20.0, 20.0, 401)};
    const auto bundle = simulate(switching(64), TimeGrid(1.0, 64), 300, 23);
    const auto d = martingale_decomposition(sq, kBand, grid, bundle);
    const double dx = grid.space.dx();
    const double budget = grid_budget(cfl_time_grid(1.0, grid.space, kBand).dt(), dx);
    CHECK(d.initial == doctest::Approx(4.0).epsilon(1e-3));
    double z_err = 0.0, k_err = 0.0;
    for (std::size_t p = 0; p < 300; ++p)
        for (std::size_t j = 0; j <= 64; ++j) {
            z_err = std::max(z_err, std::abs(d.z(p, j) - 2.0 * bundle.b(p, j)));
            k_err = std::max(k_err, std::abs(d.k(p, j) - (bundle.qv(p, j) - 4.0 * bundle.grid.time(j))));
        }
    CHECK(z_err <= budget);
    CHECK(k_err <= budget);
    // for a quadratic payoff the residual is the gap between realised and integrated QV
    const auto realized = realized_quadratic_variation(bundle.b);
    REQUIRE(d.residual.size() == 300);
    for (std::size_t p = 0; p < 300; ++p) {
        double gap = 0.0;
        for (std::size_t j = 0; j <= 64; ++j) gap = std::max(gap, std::abs(realized(p, j) - bundle.qv(p, j)));
        CHECK(std::abs(d.residual[p] - gap) <= 2.0 * budget);
    }

    const CylinderFunctional two({0.3, 1.0}, [](std::span<const double> x) { return x[1]; }, {20.0, 1.0, 20.0});
    CHECK(kind_of([&] { martingale_decomposition(two, kBand, grid, bundle); }) == ErrorKind::Usage);
}

TEST_CASE("martingale test verdicts") {
    const auto k = martingale_test(k_of_one, family(), kPairs, TimeGrid(1.0, 16), 4000, 3);
    REQUIRE(k.rows.size() == 3);
    CHECK(k.consistent);
    CHECK(k.rows[2].min.mean == doctest::Approx(-3.0).epsilon(1e-9));
    CHECK(k.rows[2].min_index == 0);
    const auto drift = martingale_test(minus_t, family(), kPairs, TimeGrid(1.0, 16), 4000, 3);
    CHECK_FALSE(drift.consistent);
    for (const auto& r : drift.rows) CHECK_FALSE(r.consistent);

    std::ostringstream os;
    write_martingale_csv(k, "K(1)", "lo,hi,switching", os);
    CHECK(os.str().rfind("process,s,t,family,sup,sup_stderr,sup_index,min,min_stderr,min_index,tolerance,verdict\n",
                         0) == 0);
    CHECK(os.str().find("\"lo,hi,switching\"") != std::string::npos);
}

TEST_CASE("drift identification") {
    auto constant = [](double v) { return StepRule([v](const PathView&) { return v; }); };
    const auto rows = identify_drift({0.0, 0.5, 1.0}, {constant(1.0), constant(-2.0)}, kBand, {}, TimeGrid(1.0, 16),
                                     4000, 5);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].drift == doctest::Approx(4.0).epsilon(0.02));
    CHECK(rows[1].drift == doctest::Approx(-2.0).epsilon(0.02));
    CHECK(rows[0].bracket_lo <= rows[0].drift);
    CHECK(rows[0].drift <= rows[0].bracket_hi);
}

TEST_CASE("oscillator quadrature") {
    const DeterministicStep zeta{{0.0, 0.5, 1.0}, {1.0, 2.0}};
    const std::vector<int> ks{1, 2, 3, 4};
    const auto rows = step2_limit_check(zeta, 0.25, ks);
    REQUIRE(rows.size() == 4);
    // midpoint quadrature oracle for the negative-part integral
    auto zeta_at = [](double s) { return s <= 0.5 ? 1.0 : 2.0; };
    for (const auto& r : rows) {
        CAPTURE(r.k);
        const int n = 1200000;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double s = (i + 0.5) / n;
            if (delta_kalpha(r.k, 0.25, s) == -1) sum += zeta_at(s);
        }
        CHECK(r.integral_minus == doctest::Approx(sum / n).epsilon(1e-5));
        CHECK(r.target == doctest::Approx(0.75 * 1.5));
        CHECK(r.divides == (r.k % 2 == 0));
        if (r.divides) CHECK(r.gap == 0.0);
        else CHECK(r.gap > 1e-3);
        CHECK(r.block_identity <= 1e-15);
        CHECK(r.step4_gap <= 1e-14);
    }
}

TEST_CASE("stationary increments of K(1)") {
    const std::vector<std::pair<double, double>> windows{{0.0, 0.5}, {0.25, 0.5}};
    const std::vector<ControlProcess> constants{ControlProcess::constant(kBand, 1.0),
                                                ControlProcess::constant(kBand, 1.5)};
    const auto rows = increment_stationarity_test(k_of_one, constants, windows, 0.5, TimeGrid(1.0, 16), 4000, 9);
    CHECK(rows.size() == 2 * windows.size());
    for (const auto& r : rows) CHECK(r.consistent);
}
