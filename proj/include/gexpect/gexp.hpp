#pragma once

// G-expectation and conditional G-expectation of cylinder functionals by the
// backward recursion over the cylinder times. On [t_{k-1}, t_k] the value
// u_k(t, x; x_1..x_{k-1}) solves the backward G-heat equation with data
//     u_n(t_n, x; x_1..x_{n-1}) = phi(x_1, .., x_{n-1}, x),
//     u_k(t_k, x; x_1..x_{k-1}) = u_{k+1}(t_k, x; x_1..x_{k-1}, x).
// Earlier path values x_j live on the same space grid as x, so the stitching
// is a diagonal slice and needs no interpolation.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "gexpect/core.hpp"
#include "gexpect/gheat.hpp"

namespace gexpect {

inline constexpr std::size_t kMaxCylinderTimes = 3;

struct PdeGrid {
    SpaceGrid space;
    /// dt on each cylinder interval is the largest value <= cfl_fraction * dx^2 / sigma_hi^2.
    double cfl_fraction = 1.0;
    /// Worker threads for the parameter-indexed solves (0 = hardware concurrency).
    unsigned threads = 0;
};

/// Solved recursion for one functional. Keeps the data layer of every level
/// (size n_points^k for level k < n); full per-level surfaces are kept only when
/// requested, as path-level evaluation needs them.
class CylinderRecursion {
public:
    struct Options {
        std::size_t n_max = kMaxCylinderTimes;
        bool keep_surfaces = false;
        /// Upper bound on stored surface values; the snapshot stride grows to fit.
        std::size_t surface_budget = std::size_t{1} << 25;
    };

    CylinderRecursion(CylinderFunctional xi, GParams band, PdeGrid grid);
    CylinderRecursion(CylinderFunctional xi, GParams band, PdeGrid grid, Options options);

    const CylinderFunctional& functional() const noexcept { return xi_; }
    const GParams& band() const noexcept { return band_; }
    const PdeGrid& grid() const noexcept { return grid_; }
    std::size_t levels() const noexcept { return xi_.size(); }
    /// Time grid of level k (1-based) on [t_{k-1}, t_k], as a horizon of length t_k - t_{k-1}.
    const TimeGrid& interval_grid(std::size_t level) const { return steps_.at(level - 1); }

    /// E[xi] = u_1(0, 0).
    double value() const;

    /// E_t[xi] given the cylinder values at times <= t followed by omega(t) when t
    /// is not itself a cylinder time. At t = 0 the prefix is {omega(0)}; at t = T it
    /// is the full set of cylinder values.
    double conditional(double t, std::span<const double> prefix) const;

    /// u, d_x u, d_xx u of the running level at calendar time t, for earlier
    /// cylinder values `params` (those with t_j <= t, t_j < T) and current level x.
    /// Requires keep_surfaces.
    ValueSurface::Local local(double t, std::span<const double> params, double x) const;

    /// Level containing t: the k with t in [t_{k-1}, t_k), or n at t = T.
    std::size_t level_at(double t) const;

    /// Level-1 surface, tau = t_1 - t (requires keep_surfaces).
    const ValueSurface& first_level_surface() const;

private:
    std::vector<double> data_row(std::size_t level, std::size_t combo) const;
    double interpolate_layer(std::size_t level, std::span<const double> coords) const;
    double solve_back(std::size_t level, std::size_t combo, double length, double x) const;

    CylinderFunctional xi_;
    GParams band_;
    PdeGrid grid_;
    Options options_;
    std::vector<TimeGrid> steps_;
    // layers_[k-1]: data of level k at t_k (n_points^k values) for k < n
    std::vector<std::vector<double>> layers_;
    std::vector<double> start_row_;  // u_1(0, .)
    // surfaces_[k-1][combo]: level k surface, tau = t_k - t
    std::vector<std::vector<ValueSurface>> surfaces_;
};

/// E[xi]. Capability error when xi has more than n_max times.
double g_expectation(const CylinderFunctional& xi, const GParams& band, const PdeGrid& grid,
                     std::size_t n_max = kMaxCylinderTimes);

/// E_t[xi] at the given prefix (see CylinderRecursion::conditional).
double conditional_g_expectation(const CylinderFunctional& xi, double t, std::span<const double> prefix,
                                 const GParams& band, const PdeGrid& grid);

/// E[|xi|^p]^{1/p}, p >= 1.
double lp_norm(const CylinderFunctional& xi, double p, const GParams& band, const PdeGrid& grid);

/// Level-1 surface in calendar time with header `t,x,u,du_dx,d2u_dx2`.
void write_conditional_csv(const CylinderRecursion& recursion, std::ostream& os);

}  // namespace gexpect
