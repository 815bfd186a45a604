#pragma once

// Monotone explicit solver for the G-heat equation
//     d_tau u = G(d_xx u),   u(0, x) = phi(x),
// written in "time elapsed since the data layer" tau. For a terminal value
// problem on [0, T] in calendar time, tau = T - t.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "gexpect/core.hpp"

namespace gexpect {

/// Grid function u(tau_r, x_i). Rows are stored for a subset of the solver's
/// time steps (every step by default); `tau(r)` gives each stored row's time.
class ValueSurface {
public:
    struct Local {
        double u;
        double ux;
        double uxx;
    };

    ValueSurface(TimeGrid time_grid, SpaceGrid space_grid, GParams band, std::vector<double> taus,
                 std::vector<double> values);

    const TimeGrid& time_grid() const noexcept { return time_; }
    const SpaceGrid& space_grid() const noexcept { return space_; }
    const GParams& band() const noexcept { return band_; }

    std::size_t n_rows() const noexcept { return taus_.size(); }
    double tau(std::size_t r) const noexcept { return taus_[r]; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * space_.n_points(), space_.n_points()};
    }
    double at(std::size_t r, std::size_t i) const noexcept { return values_[r * space_.n_points() + i]; }
    std::span<const double> values() const noexcept { return values_; }

    /// Linear interpolation in tau and x. Throws Extrapolation outside the grid.
    double value(double tau, double x) const;
    /// u, centred d_x u and centred d_xx u, linearly interpolated in tau and x.
    Local local(double tau, double x) const;

private:
    struct RowPair {
        std::size_t lo;
        std::size_t hi;
        double w;
    };
    RowPair bracket(double tau) const;
    Local local_on_row(std::size_t r, GridLocation loc) const;

    TimeGrid time_;
    SpaceGrid space_;
    GParams band_;
    std::vector<double> taus_;
    std::vector<double> values_;
};

/// Number of explicit steps on [0, horizon] with dt <= fraction * dx^2 / sigma_hi^2.
std::size_t cfl_steps(double horizon, const SpaceGrid& space, const GParams& band, double fraction = 1.0);
TimeGrid cfl_time_grid(double horizon, const SpaceGrid& space, const GParams& band, double fraction = 1.0);
/// Throws Configuration when dt > dx^2 / sigma_hi^2.
void check_cfl(const TimeGrid& time, const SpaceGrid& space, const GParams& band);

struct GHeatOptions {
    /// Store every `snapshot_stride`-th row (the final row is always kept).
    std::size_t snapshot_stride = 1;
};

/// Explicit Euler with centred second differences; boundary nodes hold the
/// payoff values fixed ("Dirichlet from data").
ValueSurface solve_gheat(std::span<const double> payoff, const GParams& band, const TimeGrid& time,
                         const SpaceGrid& space, GHeatOptions options = {});
ValueSurface solve_gheat(const std::function<double(double)>& payoff, const GParams& band, const TimeGrid& time,
                         const SpaceGrid& space, GHeatOptions options = {});

/// Steps one payoff row through `n_steps` explicit steps and returns only the
/// final row. Used by the cylinder recursion where intermediate rows are not kept.
std::vector<double> advance_gheat(std::span<const double> payoff, const GParams& band, double dt,
                                  const SpaceGrid& space, std::size_t n_steps);

/// Derivative fields on the stored rows: d_tau (centred between stored rows,
/// one-sided on the first and last row), centred d_x and d_xx (boundary nodes
/// copy their interior neighbour). Row-major, n_rows x n_points.
struct DerivativeFields {
    std::size_t n_rows = 0;
    std::size_t n_points = 0;
    std::vector<double> du_dtau;
    std::vector<double> du_dx;
    std::vector<double> d2u_dx2;

    double at(const std::vector<double>& field, std::size_t r, std::size_t i) const { return field[r * n_points + i]; }
};

DerivativeFields derivative_fields(const ValueSurface& surface);

/// Region of the grid treated as interior for residual checks.
struct InteriorRegion {
    double tau_from = 0.0;        // skip rows with tau below this value
    double x_margin_fraction = 0.2;  // skip this fraction of the domain at each end
};

/// max |d_tau u - G(d_xx u)| over the interior region.
double max_pde_residual(const ValueSurface& surface, const DerivativeFields& fields, InteriorRegion region = {});

/// Optimal bang-bang volatility sigma*(tau, x) = sign_vol(d_xx u).
class VolatilityField {
public:
    explicit VolatilityField(const ValueSurface& surface);

    const ValueSurface& surface() const noexcept { return surface_; }
    /// Level on a stored node: sigma_hi or sigma_lo.
    double at(std::size_t r, std::size_t i) const noexcept { return levels_[r * surface_.space_grid().n_points() + i]; }
    /// Curvature interpolated to (tau, x), then the bang-bang selector. Points
    /// beyond the space grid use the nearest boundary column.
    double at(double tau, double x) const;

private:
    ValueSurface surface_;
    std::vector<double> levels_;
};

VolatilityField feedback_field(const ValueSurface& surface);

/// Error budget C (dt + dx^2) used for PDE-vs-oracle comparisons.
inline constexpr double kGridBudgetC = 10.0;
inline double grid_budget(double dt, double dx, double c = kGridBudgetC) { return c * (dt + dx * dx); }

/// CSV with header `t,x,u,du_dx,d2u_dx2`, one row per stored node; t is tau.
void write_surface_csv(const ValueSurface& surface, std::ostream& os);

}  // namespace gexpect
