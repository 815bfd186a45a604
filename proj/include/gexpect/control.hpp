#pragma once

// Adapted volatility controls h with values in [sigma_lo, sigma_hi].

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gexpect/core.hpp"

namespace gexpect {

class VolatilityField;

/// The information available to a control when it chooses h on the step
/// [t_k, t_{k+1}): the path up to and including node k.
struct PathView {
    const TimeGrid* grid = nullptr;
    std::size_t step = 0;
    std::span<const double> b;   // B at nodes 0..step
    std::span<const double> qv;  // <B> at nodes 0..step
    std::span<const double> h;   // controls already applied on steps 0..step-1

    double time() const noexcept { return grid->time(step); }
    double level() const noexcept { return b[step]; }
    /// The same path seen at an earlier node.
    PathView truncated(std::size_t k) const noexcept { return {grid, k, b.first(k + 1), qv.first(k + 1), h.first(k)}; }
};

/// Level rule of a step control, evaluated once at the start of its interval.
using StepRule = std::function<double(const PathView&)>;
/// Level rule phi_i of a self-dependent control: receives the realised block
/// increments of B over the i earlier blocks, oldest first.
using BlockRule = std::function<double(std::span<const double>)>;

class ControlProcess;

/// Refinement n, piece fraction alpha and the control used on the alpha-pieces
/// of a 2^n m-perturbation.
class PerturbationSchedule {
public:
    PerturbationSchedule(int refinement, double alpha, std::shared_ptr<const ControlProcess> sub_control);
    /// alpha = eps / (sigma_hi^2 - sigma_lo^2) with 0 < eps < sigma_hi^2 - sigma_lo^2.
    static PerturbationSchedule from_epsilon(int refinement, double eps, const GParams& band,
                                             std::shared_ptr<const ControlProcess> sub_control);

    int refinement() const noexcept { return refinement_; }
    double alpha() const noexcept { return alpha_; }
    double epsilon(const GParams& band) const noexcept { return alpha_ * band.var_spread(); }
    const ControlProcess& sub_control() const noexcept { return *sub_; }
    std::shared_ptr<const ControlProcess> sub_control_ptr() const noexcept { return sub_; }

private:
    int refinement_;
    double alpha_;
    std::shared_ptr<const ControlProcess> sub_;
};

class ControlProcess {
public:
    enum class Kind { Constant, Step, SelfDependent, Feedback, Perturbed };

    static ControlProcess constant(const GParams& band, double sigma);
    /// Piecewise-constant control on 0 = t_0 < ... < t_n = T; rules[j] fixes the
    /// level on (t_j, t_{j+1}] from the path observed up to t_j.
    static ControlProcess step(const GParams& band, std::vector<double> breakpoints, std::vector<StepRule> rules);
    /// m-step self-dependent control on [0, horizon], m = rules.size().
    static ControlProcess self_dependent(const GParams& band, double horizon, std::vector<BlockRule> rules);
    /// h_k = sign_vol(d_xx u(horizon - t_k, B_k)) read off a solved surface.
    static ControlProcess feedback(std::shared_ptr<const VolatilityField> field, double horizon);
    /// Step control choosing sign_vol(eta_j) on each interval (the maximiser of E[int eta d<B>]).
    static ControlProcess bang_bang(const GParams& band, std::vector<double> breakpoints, std::vector<StepRule> eta);

    Kind kind() const noexcept;
    const GParams& band() const noexcept;
    std::string describe() const;

    /// Level applied on [t_k, t_{k+1}) given the path up to node k. Always in band;
    /// a rule producing a level outside [sigma_lo, sigma_hi] raises a Domain error.
    double level(const PathView& view) const;

    /// Throws Usage when the grid does not resolve the control's switching times,
    /// Extrapolation when a feedback surface does not cover the horizon.
    void check_grid(const TimeGrid& grid) const;

    // Self-dependent / perturbed structure.
    std::size_t blocks() const;           // m
    double horizon() const;               // T of a self-dependent (or perturbed) control
    /// |xi_i| for block i evaluated on the given path (self-dependent or perturbed).
    double block_level(std::size_t block, const PathView& view) const;
    const PerturbationSchedule* schedule() const noexcept;
    const ControlProcess* base() const noexcept;

    struct Impl;

private:
    friend ControlProcess perturb_control(const ControlProcess& base, const PerturbationSchedule& schedule);
    static ControlProcess perturbed(const ControlProcess& base, const PerturbationSchedule& schedule);
    explicit ControlProcess(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;
};

/// Builds a 2^n m-perturbation of an m-step self-dependent control: on each
/// sub-block ]j L, (j + alpha) L], L = T / (2^n m), the schedule's sub-control
/// runs; on the rest of the sub-block the constant level
///     sqrt((|xi_i|^2 - (1/L) int_{alpha-piece} h^2 ds) / (1 - alpha))
/// restores int_{sub-block} h^2 ds = L |xi_i|^2.
/// Base levels must satisfy sigma_lo^2 + eps <= |xi_i|^2 <= sigma_hi^2 - eps,
/// eps = alpha (sigma_hi^2 - sigma_lo^2); this is spot-checked here and
/// enforced on every simulated path (Domain error naming the block).
ControlProcess perturb_control(const ControlProcess& base, const PerturbationSchedule& schedule);

/// The compensating level of a single sub-block given the base level |xi| and
/// the realised integral of h^2 over its alpha-piece.
double compensating_level(double xi_abs, double alpha_piece_integral, double sub_block_length, double alpha);

}  // namespace gexpect
