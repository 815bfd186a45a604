#pragma once

// Derivatives of cylinder path processes, the operator A_G = D_t + G(D_x^2),
// and Markovian G-BSDEs
//     Y_t = xi + int_t^T f(s, Y, Z) ds - int_t^T Z dB - (K_T - K_t),  xi = phi(B_T),
// solved through D_t u + G(D_x^2 u) + f(t, u, D_x u) = 0, u(T, .) = phi.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "gexpect/core.hpp"
#include "gexpect/gheat.hpp"
#include "gexpect/mc.hpp"

namespace gexpect {

/// u(t, omega) = u_k(t, omega(t); omega(t_1), .., omega(t_k)) for t in [t_k, t_{k+1}).
class CylinderPathProcess {
public:
    using Piece = std::function<double(double t, double x, std::span<const double> params)>;

    /// partition = {0 = t_0 < .. < t_n = T}; pieces[k] lives on [t_k, t_{k+1}) and
    /// receives k earlier values. Stitching is spot-checked (Domain error).
    CylinderPathProcess(std::vector<double> partition, std::vector<Piece> pieces, double stitch_tolerance = 1e-6);

    /// Single-interval process u(t, omega) = f(t, omega(t)).
    static CylinderPathProcess markov(double horizon, std::function<double(double, double)> f);
    /// Markov process read off a backward surface: u(t, x) = surface.value(horizon - t, x).
    static CylinderPathProcess from_surface(const ValueSurface& surface);

    const std::vector<double>& partition() const noexcept { return partition_; }
    double horizon() const noexcept { return partition_.back(); }
    /// Interval index k with t in [t_k, t_{k+1}) (n-1 at t = T).
    std::size_t interval(double t) const;
    double value(double t, double x, std::span<const double> params) const;

private:
    std::vector<double> partition_;
    std::vector<Piece> pieces_;
};

struct CylinderDerivatives {
    double dt = 0.0;
    double dx = 0.0;
    double dxx = 0.0;
    double step_t = 0.0;  // finite-difference steps used
    double step_x = 0.0;
};

/// Central differences with step 1e-4 * max(1, |.|) (one-sided second order in t
/// at interval ends). prefix = {omega(t), omega(t_1), .., omega(t_k)}.
CylinderDerivatives cylinder_derivatives(const CylinderPathProcess& u, double t, std::span<const double> prefix);

/// A_G u = D_t u + G(D_x^2 u).
double a_g(const CylinderPathProcess& u, const GParams& band, double t, std::span<const double> prefix);

using Driver = std::function<double(double t, double y, double z)>;

/// Markovian G-BSDE data; the driver's Lipschitz bound is spot-checked (Domain error).
struct GBSDEProblem {
    GBSDEProblem(std::function<double(double)> terminal, Driver driver, double lipschitz, GParams band,
                 double horizon);

    std::function<double(double)> terminal;
    Driver driver;
    double lipschitz;
    GParams band;
    double horizon;
};

struct PpdeOptions {
    /// Cross-validate the explicit driver with Picard sweeps (source frozen at the
    /// previous iterate) until the sup change is below picard_tolerance.
    bool picard = false;
    std::size_t max_picard_iterations = 10;
    double picard_tolerance = 1e-10;
};

struct GBSDESolution {
    ValueSurface y;  // tau = T - t; Z = d_x of it
    std::size_t picard_iterations = 0;
    double picard_change = 0.0;  // sup change of the last Picard sweep
};

/// Smallest step count meeting CFL and dt L (1 + 1/dx) <= 1.
TimeGrid stable_time_grid(const GBSDEProblem& problem, const SpaceGrid& space, double cfl_fraction = 1.0);

/// Explicit backward scheme u <- u + dt (G(D^2 u) + f(t, u, D u)); interior nodes use
/// the G-heat stencil, the two boundary nodes follow u' = f (no curvature information).
/// Configuration error when CFL or the driver bound fails.
GBSDESolution solve_ppde(const GBSDEProblem& problem, const TimeGrid& time, const SpaceGrid& space,
                         PpdeOptions options = {});

struct BsdeResidualReport {
    double max_residual = 0.0;
    bool k_starts_at_zero = false;
    bool k_monotone = false;
    double max_k_increase = 0.0;
    PathMatrix y;
    PathMatrix z;
    PathMatrix k;
};

/// Along the bundle's paths: Y = u, Z = D_x u, K_t = 1/2 int D_x^2 u d<B> - int G(D_x^2 u) ds
/// and the residual of the backward equation. The stochastic integral includes the
/// Milstein term 1/2 D_x^2 u ((dB)^2 - d<B>) on each step. Usage error when the
/// bundle's horizon differs from T.
BsdeResidualReport gbsde_residual(const GBSDESolution& solution, const GBSDEProblem& problem,
                                  const PathBundle& bundle);

struct EquivalenceReport {
    double ppde_residual = 0.0;            // max |A_G u + f| on the interior
    double reconstruction_residual = 0.0;  // max |u_t - (u_0 + int A_G u ds + int D_x u dB + K_t)|
    double ppde_tolerance = 0.0;
    double reconstruction_tolerance = 0.0;
    bool ppde_pass = false;
    bool reconstruction_pass = false;
};

struct EquivalenceOptions {
    InteriorRegion interior{0.05, 0.2};
    double ppde_tolerance = -1.0;            // < 0: grid budget of the PDE grid
    double reconstruction_tolerance = -1.0;  // < 0: grid budget with the bundle's dt
};

/// Checks both directions of the BSDE / PPDE correspondence on a solved problem.
EquivalenceReport equivalence_check(const GBSDESolution& solution, const GBSDEProblem& problem,
                                    const PathBundle& bundle, EquivalenceOptions options = {});

/// CSV with header `t,x,Y,Z` (calendar time).
void write_solution_csv(const GBSDESolution& solution, std::ostream& os);
/// CSV with header `path,step,t,K`.
void write_k_traces_csv(const BsdeResidualReport& report, const TimeGrid& grid, std::ostream& os,
                        std::size_t max_paths = SIZE_MAX);

}  // namespace gexpect
