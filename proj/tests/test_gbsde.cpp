#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gexpect/gbsde.hpp"

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

double butterfly(double x) { return std::max(0.0, 1.0 - std::abs(x)); }
Driver zero() {
    return [](double, double, double) { return 0.0; };
}

ControlProcess switching(std::size_t steps) {
    std::vector<double> br(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) br[i] = static_cast<double>(i) / static_cast<double>(steps);
    return ControlProcess::bang_bang(kBand, br, std::vector<StepRule>(steps, [](const PathView& v) {
                                         return -v.level();
                                     }));
}

}  // namespace

TEST_CASE("cylinder path processes") {
    const CylinderPathProcess u({0.0, 0.5, 1.0},
                                {[](double t, double x, std::span<const double>) { return x * x + t; },
                                 [](double t, double x, std::span<const double> p) { return x * p[0] + t; }});
    CHECK(u.interval(0.2) == 0);
    CHECK(u.interval(0.5) == 1);
    CHECK(u.interval(1.0) == 1);
    CHECK(u.value(0.7, 2.0, std::vector<double>{3.0}) == doctest::Approx(6.7));
    CHECK(kind_of([&] { u.value(0.7, 2.0, std::vector<double>{}); }) == ErrorKind::Usage);
    CHECK(kind_of([] {
              CylinderPathProcess({0.0, 0.5, 1.0},
                                  {[](double, double x, std::span<const double>) { return x; },
                                   [](double, double, std::span<const double>) { return 5.0; }});
          }) == ErrorKind::Domain);

    const auto d = cylinder_derivatives(u, 0.7, std::vector<double>{2.0, 3.0});
    CHECK(d.dx == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(std::abs(d.dxx) <= 1e-4);
    CHECK(d.dt == doctest::Approx(1.0).epsilon(1e-6));
    // one-sided in t right after the stitching time
    CHECK(cylinder_derivatives(u, 0.5, std::vector<double>{2.0, 2.0}).dt == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("A_G annihilates the G-heat solution of x^2") {
    const auto u = CylinderPathProcess::markov(1.0, [](double t, double x) { return x * x + 4.0 * (1.0 - t); });
    for (double x : {-1.0, 0.0, 0.7}) {
        const std::vector<double> prefix{x};
        const auto d = cylinder_derivatives(u, 0.3, prefix);
        CHECK(d.dt == doctest::Approx(-4.0).epsilon(1e-6));
        CHECK(d.dx == doctest::Approx(2.0 * x).epsilon(1e-6));
        CHECK(d.dxx == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(std::abs(a_g(u, kBand, 0.3, prefix)) <= 1e-5);
    }
    // concave: -x^2 - (1 - t) solves the equation with the lower variance
    const auto v = CylinderPathProcess::markov(1.0, [](double t, double x) { return -x * x - (1.0 - t); });
    CHECK(std::abs(a_g(v, kBand, 0.6, std::vector<double>{0.4})) <= 1e-5);
}

TEST_CASE("problem validation") {
    CHECK(kind_of([] {
              GBSDEProblem(butterfly, [](double, double y, double) { return 3.0 * y; }, 1.0, kBand, 1.0);
          }) == ErrorKind::Domain);
    CHECK(kind_of([] {
              GBSDEProblem(butterfly, [](double, double, double) { return std::nan(""); }, 1.0, kBand, 1.0);
          }) == ErrorKind::Data);
}

TEST_CASE("constant driver shifts the solution") {
    const SpaceGrid space(-6.0, 6.0, 121);
    const GBSDEProblem p0(butterfly, zero(), 0.0, kBand, 1.0);
    const GBSDEProblem pc(butterfly, [](double, double, double) { return 0.5; }, 0.0, kBand, 1.0);
    const auto tg = stable_time_grid(p0, space);
    const auto s0 = solve_ppde(p0, tg, space);
    const auto sc = solve_ppde(pc, tg, space);
    double worst = 0.0;
    for (std::size_t r = 0; r < s0.y.n_rows(); ++r)
        for (std::size_t i = 0; i < space.n_points(); ++i)
            worst = std::max(worst, std::abs(sc.y.at(r, i) - s0.y.at(r, i) - 0.5 * s0.y.tau(r)));
    CHECK(worst <= 1e-12);
    const auto gh = solve_gheat(butterfly, kBand, tg, space);
    CHECK(s0.y.value(1.0, 0.0) == doctest::Approx(gh.value(1.0, 0.0)).epsilon(1e-12));
}

TEST_CASE("linear driver with a degenerate band") {
    const GParams flat(1.0, 1.0);
    const SpaceGrid space(-6.0, 6.0, 121);
    const GBSDEProblem p([](double) { return 1.0; }, [](double, double y, double) { return -0.1 * y; }, 0.1, flat,
                         1.0);
    const auto tg = stable_time_grid(p, space);
    CHECK(tg.dt() * 0.1 * (1.0 + 1.0 / space.dx()) <= 1.0);
    const auto s = solve_ppde(p, tg, space);
    CHECK(std::abs(s.y.value(1.0, 0.0) - std::exp(-0.1)) <= 1e-3);

    PpdeOptions picard;
    picard.picard = true;
    picard.max_picard_iterations = 50;
    const auto sp = solve_ppde(p, tg, space, picard);
    CHECK(sp.picard_iterations >= 1);
    CHECK(sp.picard_change <= 1e-10);
    CHECK(std::abs(sp.y.value(1.0, 0.0) - s.y.value(1.0, 0.0)) <= 1e-4);
}

TEST_CASE("stability and grid errors") {
    const SpaceGrid space(-2.0, 2.0, 41);
    const GBSDEProblem p(butterfly, zero(), 0.0, kBand, 1.0);
    CHECK(kind_of([&] { solve_ppde(p, TimeGrid(1.0, 10), space); }) == ErrorKind::Configuration);
    CHECK(kind_of([&] { solve_ppde(p, TimeGrid(2.0, 4000), space); }) == ErrorKind::Usage);
}

TEST_CASE("residual along paths and the equivalence check") {
    const SpaceGrid wide(-20.0, 20.0, 401);
    const GBSDEProblem p([](double x) { return x * x; }, [](double, double, double) { return 0.5; }, 0.0, kBand,
                         1.0);
    const auto tg = stable_time_grid(p, wide);
    const auto s = solve_ppde(p, tg, wide);
    const auto bundle = simulate(switching(64), TimeGrid(1.0, 64), 300, 31);
    const auto r = gbsde_residual(s, p, bundle);
    CHECK(r.max_residual <= grid_budget(tg.dt(), wide.dx()));
    CHECK(r.k_starts_at_zero);
    CHECK(r.k_monotone);
    // K_t = <B>_t - 4t for a quadratic terminal value
    for (std::size_t j = 0; j <= 64; ++j)
        CHECK(r.k(5, j) == doctest::Approx(bundle.qv(5, j) - 4.0 * bundle.grid.time(j)).epsilon(1e-3));
    const auto eq = equivalence_check(s, p, bundle);
    CHECK(eq.ppde_pass);
    CHECK(eq.reconstruction_pass);

    const auto other = simulate(ControlProcess::constant(kBand, 1.0), TimeGrid(2.0, 64), 10, 31);
    CHECK(kind_of([&] { gbsde_residual(s, p, other); }) == ErrorKind::Usage);

    std::ostringstream sol, traces;
    write_solution_csv(s, sol);
    write_k_traces_csv(r, bundle.grid, traces, 2);
    CHECK(sol.str().rfind("t,x,Y,Z\n", 0) == 0);
    const auto text = traces.str();
    CHECK(text.rfind("path,step,t,K\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 65);
}
