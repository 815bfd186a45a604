#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gexpect/gexp.hpp"

using namespace gexpect;

namespace {

const GParams kBand(1.0, 2.0);

template <class F>
double gaussian_mean(F phi, double x, double s) {
    const int n = 20000;
    const double a = -10.0, h = 20.0 / n;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = a + (i + 0.5) * h;
        sum += phi(x + s * z) * std::exp(-0.5 * z * z);
    }
    return sum * h / std::sqrt(2.0 * M_PI);
}

double butterfly(double x) { return std::max(0.0, 1.0 - std::abs(x)); }
double call(double x) { return std::max(x - 0.2, 0.0); }

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

const PdeGrid kGrid{SpaceGrid(-6.0, 6.0, 121)};

double budget(double dt_hint = 0.0) {
    const double dx = kGrid.space.dx();
    return grid_budget(std::max(dt_hint, dx * dx / 4.0), dx);
}

}  // namespace

TEST_CASE("single time: the G-heat value at the origin") {
    const auto xi = CylinderFunctional::terminal(1.0, call, {6.0, 1.0, 6.0});
    const double v = g_expectation(xi, kBand, kGrid);
    CHECK(std::abs(v - gaussian_mean(call, 0.0, 2.0)) <= budget());
    const auto s = solve_gheat(call, kBand, cfl_time_grid(1.0, kGrid.space, kBand), kGrid.space);
    CHECK(v == doctest::Approx(s.value(1.0, 0.0)).epsilon(1e-12));
}

TEST_CASE("sums of functions of independent increments") {
    // E[f(B_{t1}) + g(B_T - B_{t1})] = E[f(B_{t1})] + E[g(B_{T - t1})]
    const CylinderFunctional xi(
        {0.4, 1.0}, [](std::span<const double> d) { return butterfly(d[0]) + call(d[1]); }, {7.0, 1.0, 6.0},
        PayoffConvention::Increments);
    const auto bf = solve_gheat(butterfly, kBand, cfl_time_grid(0.4, kGrid.space, kBand), kGrid.space);
    const double expected = bf.value(0.4, 0.0) + gaussian_mean(call, 0.0, 2.0 * std::sqrt(0.6));
    CHECK(std::abs(g_expectation(xi, kBand, kGrid) - expected) <= budget());
}

TEST_CASE("three times and the capability limit") {
    const PdeGrid coarse{SpaceGrid(-6.0, 6.0, 41)};
    const CylinderFunctional xi(
        {1.0 / 3.0, 2.0 / 3.0, 1.0},
        [](std::span<const double> d) { return call(d[0]) - butterfly(d[1]) + call(d[2]); }, {20.0, 2.0, 6.0},
        PayoffConvention::Increments);
    const double s = 2.0 / std::sqrt(3.0);
    // -E[butterfly] under the lower measure is E[-butterfly]; solved directly for the oracle
    const auto neg = solve_gheat([](double x) { return -butterfly(x); }, kBand,
                                 cfl_time_grid(1.0 / 3.0, coarse.space, kBand), coarse.space);
    const double expected = 2.0 * gaussian_mean(call, 0.0, s) + neg.value(1.0 / 3.0, 0.0);
    const double dx = coarse.space.dx();
    CHECK(std::abs(g_expectation(xi, kBand, coarse) - expected) <= grid_budget(dx * dx / 4.0, dx));

    const CylinderFunctional four({0.25, 0.5, 0.75, 1.0}, [](std::span<const double>) { return 0.0; }, {});
    CHECK(kind_of([&] { g_expectation(four, kBand, coarse); }) == ErrorKind::Capability);
}

TEST_CASE("levels convention and the diagonal stitching") {
    // f(B_{t1}, B_T) = butterfly(B_T - B_{t1}) written on levels equals the single-time value on T - t1
    const CylinderFunctional xi({0.5, 1.0}, [](std::span<const double> x) { return butterfly(x[1] - x[0]); },
                                {1.0, 2.0, 6.0});
    const auto s = solve_gheat(butterfly, kBand, cfl_time_grid(0.5, kGrid.space, kBand), kGrid.space);
    CHECK(std::abs(g_expectation(xi, kBand, kGrid) - s.value(0.5, 0.0)) <= budget());
}

TEST_CASE("conditional expectations") {
    const CylinderFunctional xi({0.5, 1.0}, [](std::span<const double> x) { return butterfly(x[0] + x[1]); },
                                {1.0, 2.0, 6.0});
    CylinderRecursion::Options opt;
    opt.keep_surfaces = true;
    const CylinderRecursion rec(xi, kBand, kGrid, opt);
    CHECK(rec.conditional(0.0, std::vector<double>{0.0}) == doctest::Approx(rec.value()).epsilon(1e-12));
    CHECK(rec.conditional(1.0, std::vector<double>{0.2, 0.3}) == doctest::Approx(butterfly(0.5)));
    // at the first cylinder time the prefix is {omega(t1)}; the value is u_2(t1, x; x)
    const double mid = rec.conditional(0.5, std::vector<double>{0.1});
    const double level2 = rec.conditional(0.75, std::vector<double>{0.1, 0.1});
    CHECK(mid > 0.0);
    CHECK(level2 > 0.0);
    CHECK(rec.level_at(0.25) == 1);
    CHECK(rec.level_at(0.5) == 2);
    CHECK(rec.level_at(1.0) == 2);
    CHECK(kind_of([&] { rec.conditional(0.25, std::vector<double>{0.1, 0.2}); }) == ErrorKind::Usage);
    CHECK(kind_of([&] { rec.conditional(0.25, std::vector<double>{9.0}); }) == ErrorKind::Extrapolation);
    CHECK(kind_of([&] { rec.conditional(1.5, std::vector<double>{0.0, 0.0}); }) == ErrorKind::Domain);

    const auto l = rec.local(0.25, {}, 0.0);
    CHECK(l.u == doctest::Approx(rec.conditional(0.25, std::vector<double>{0.0})).epsilon(1e-9));
    const CylinderRecursion lean(xi, kBand, kGrid);
    CHECK(kind_of([&] { lean.local(0.25, {}, 0.0); }) == ErrorKind::Usage);
    CHECK(lean.value() == rec.value());
    CHECK(conditional_g_expectation(xi, 0.25, std::vector<double>{0.0}, kBand, kGrid) ==
          doctest::Approx(l.u).epsilon(1e-9));

    std::ostringstream os;
    write_conditional_csv(rec, os);
    CHECK(os.str().rfind("t,x,u,du_dx,d2u_dx2\n", 0) == 0);
}

TEST_CASE("results do not depend on the thread count") {
    const CylinderFunctional xi({0.5, 1.0}, [](std::span<const double> x) { return butterfly(x[0] * x[1]); },
                                {1.0, 12.0, 6.0});
    PdeGrid one = kGrid, four = kGrid;
    one.threads = 1;
    four.threads = 4;
    CHECK(g_expectation(xi, kBand, one) == g_expectation(xi, kBand, four));
}

TEST_CASE("L^p norms") {
    const auto b = CylinderFunctional::terminal(1.0, [](double x) { return x; }, {6.0, 1.0, 6.0});
    CHECK(std::abs(lp_norm(b, 2.0, kBand, kGrid) - 2.0) <= 0.02);
    CHECK(std::abs(lp_norm(b, 1.0, kBand, kGrid) - 2.0 * std::sqrt(2.0 / M_PI)) <= 0.01);
    CHECK(kind_of([&] { lp_norm(b, 0.5, kBand, kGrid); }) == ErrorKind::Domain);
}
