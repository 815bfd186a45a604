#include <cstring>
#include <utility>
#include <random>
#include <vector>

#include "doctest.h"
#include "gexpect/core.hpp"
#include "gexpect/gheat.hpp"
#include "gexpect/kernels.hpp"
#include "gexpect/mc.hpp"

using namespace gexpect;
namespace k = gexpect::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -3.0, double hi = 3.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// odd sizes exercise the scalar tails of the vector loops
const std::size_t kSizes[] = {3, 4, 5, 7, 8, 9, 31, 257, 1001};

}  // namespace

TEST_CASE("scalar reference values") {
    const std::vector<double> u{0.0, 1.0, 0.0, 1.0};
    std::vector<double> out(4);
    k::scalar::gheat_step(u, {}, out, {0.1, 1.0, 1.0, 4.0});
    // interior second differences: -2 and +2; G(-2) = -1, G(2) = 4
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(1.0 - 0.1));
    CHECK(out[2] == doctest::Approx(0.0 + 0.4));
    CHECK(out[3] == 1.0);

    std::vector<double> d2(4);
    k::scalar::second_difference(u, d2, 1.0);
    CHECK(d2 == std::vector<double>{-2.0, -2.0, 2.0, 2.0});

    std::vector<double> inc(2);
    k::scalar::k_increments(std::vector<double>{1.0, -1.0}, std::vector<double>{1.0, 1.0}, inc, 0.5, 1.0, 4.0);
    // (1 * 1) 0.5 - 2 G(1) 0.5 = -1.5; (-1 * 1) 0.5 - 2 G(-1) 0.5 = 0
    CHECK(inc[0] == doctest::Approx(-1.5));
    CHECK(inc[1] == doctest::Approx(0.0));
}

TEST_CASE("AVX2 variants agree bitwise with the scalar reference") {
    if (!k::avx2::available()) {
        MESSAGE("AVX2 unavailable in this build or CPU; equivalence not exercised");
        return;
    }
    const k::GHeatCoeffs c{2.1e-4, 1111.0, 1.0, 4.0};
    for (std::size_t n : kSizes) {
        CAPTURE(n);
        const auto u = random_vector(n, 1 + n);
        const auto src = random_vector(n, 2 + n);
        std::vector<double> a(n), b(n);
        k::scalar::gheat_step(u, {}, a, c);
        k::avx2::gheat_step(u, {}, b, c);
        CHECK(bitwise_equal(a, b));
        k::scalar::gheat_step(u, src, a, c);
        k::avx2::gheat_step(u, src, b, c);
        CHECK(bitwise_equal(a, b));

        k::scalar::second_difference(u, a, 37.0);
        k::avx2::second_difference(u, b, 37.0);
        CHECK(bitwise_equal(a, b));

        const auto h = random_vector(n, 3 + n, 1.0, 2.0);
        const auto z = random_vector(n, 4 + n);
        auto b1 = random_vector(n, 5 + n), q1 = random_vector(n, 6 + n, 0.0, 1.0);
        auto b2 = b1, q2 = q1;
        k::scalar::advance_paths(b1, q1, h, z, 0.01, 0.1);
        k::avx2::advance_paths(b2, q2, h, z, 0.01, 0.1);
        CHECK(bitwise_equal(b1, b2));
        CHECK(bitwise_equal(q1, q2));

        k::scalar::k_increments(u, h, a, 0.01, 1.0, 4.0);
        k::avx2::k_increments(u, h, b, 0.01, 1.0, 4.0);
        CHECK(bitwise_equal(a, b));
    }
}

TEST_CASE("dispatch selection") {
    {
        const k::ScopedIsa scope(k::Isa::Scalar);
        CHECK(k::active_isa() == k::Isa::Scalar);
    }
    CHECK(k::active_isa() == k::detected_isa());
    CHECK(k::to_string(k::Isa::Avx2) == "avx2");
}

TEST_CASE("solver and simulator results do not depend on the ISA") {
    const GParams band(1.0, 2.0);
    const SpaceGrid space(-4.0, 4.0, 81);
    const auto tg = cfl_time_grid(1.0, space, band);
    auto payoff = [](double x) { return std::max(0.0, 1.0 - std::abs(x)); };
    const auto control = ControlProcess::constant(band, 1.5);
    const TimeGrid grid(1.0, 16);

    auto run = [&] {
        const auto s = solve_gheat(payoff, band, tg, space);
        return std::pair(std::vector<double>(s.values().begin(), s.values().end()),
                         simulate(control, grid, 1000, 5));
    };
    const auto scalar_run = [&] {
        const k::ScopedIsa scope(k::Isa::Scalar);
        return run();
    }();
    const auto vector_run = run();
    CHECK(bitwise_equal(scalar_run.first, vector_run.first));
    CHECK(scalar_run.second == vector_run.second);
}

TEST_CASE("simulation does not depend on the thread count or chunk size") {
    const GParams band(1.0, 2.0);
    std::vector<double> br{0.0, 0.5, 1.0};
    std::vector<StepRule> eta(2, [](const PathView& v) { return -v.level(); });
    const auto control = ControlProcess::bang_bang(band, br, eta);
    const TimeGrid grid(1.0, 32);
    const auto one = simulate(control, grid, 777, 11, {1, 256});
    const auto four = simulate(control, grid, 777, 11, {4, 256});
    const auto small_chunks = simulate(control, grid, 777, 11, {3, 5});
    CHECK(one == four);
    CHECK(one == small_chunks);
}
