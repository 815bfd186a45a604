#pragma once

// Foundational types: the volatility band and its generator G, grids,
// cylinder functionals and the small closed-form maps used throughout.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gexpect/error.hpp"

namespace gexpect {

/// Volatility band [sigma_lo, sigma_hi] defining the sublinear generator G.
/// Stored as volatilities; variances are derived on demand.
class GParams {
public:
    GParams(double sigma_lo, double sigma_hi);

    double sigma_lo() const noexcept { return lo_; }
    double sigma_hi() const noexcept { return hi_; }
    double var_lo() const noexcept { return lo_ * lo_; }
    double var_hi() const noexcept { return hi_ * hi_; }
    /// sigma_hi^2 - sigma_lo^2
    double var_spread() const noexcept { return var_hi() - var_lo(); }
    bool degenerate() const noexcept { return lo_ == hi_; }

private:
    double lo_;
    double hi_;
};

/// G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2
double g_value(const GParams& params, double a) noexcept;

/// G_eps(a) = G(a) - eps |a| / 2, for 0 <= eps <= (sigma_hi^2 - sigma_lo^2)/2.
double g_eps_value(const GParams& params, double eps, double a);

/// +1 on the leading alpha-fraction of each ]i/k, (i+1)/k], -1 on the rest.
/// Defined for s in (0, 1].
int delta_kalpha(int k, double alpha, double s);

/// Bang-bang volatility selector: sigma_hi when a >= 0, sigma_lo otherwise.
double sign_vol(const GParams& params, double a) noexcept;

/// Uniform time grid on [0, horizon].
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t n_steps);

    double horizon() const noexcept { return horizon_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    double dt() const noexcept { return horizon_ / static_cast<double>(n_steps_); }
    double time(std::size_t k) const noexcept {
        return k == n_steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(n_steps_);
    }
    /// Index of the node at time t, or throws Usage if t is not a node.
    std::size_t node_index(double t) const;
    /// Nearest node, without the on-grid requirement.
    std::size_t nearest_index(double t) const noexcept;
    bool has_node(double t) const noexcept;

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double horizon_;
    std::size_t n_steps_;
};

/// Result of locating a point on a uniform grid: value = (1-w) f[i] + w f[i+1].
struct GridLocation {
    std::size_t index;
    double weight;
};

/// Uniform space grid on [x_min, x_max].
class SpaceGrid {
public:
    SpaceGrid(double x_min, double x_max, std::size_t n_points);

    double x_min() const noexcept { return x_min_; }
    double x_max() const noexcept { return x_max_; }
    std::size_t n_points() const noexcept { return n_points_; }
    double dx() const noexcept { return (x_max_ - x_min_) / static_cast<double>(n_points_ - 1); }
    double x(std::size_t i) const noexcept {
        return i + 1 == n_points_ ? x_max_ : x_min_ + dx() * static_cast<double>(i);
    }
    bool contains(double x) const noexcept { return x >= x_min_ && x <= x_max_; }
    /// Throws Extrapolation when x lies outside [x_min, x_max].
    GridLocation locate(double x) const;
    std::vector<double> nodes() const;

    friend bool operator==(const SpaceGrid&, const SpaceGrid&) = default;

private:
    double x_min_;
    double x_max_;
    std::size_t n_points_;
};

/// Symmetric grid of +/- (6 sigma_hi sqrt(T) + margin) with the given node count.
SpaceGrid default_space_grid(const GParams& band, double horizon, std::size_t n_points, double margin = 0.0);

/// Whether a cylinder payoff reads the path at its times as levels
/// (omega(t_1), ..., omega(t_n)) or as increments (omega(t_1) - 0, ..., omega(t_n) - omega(t_{n-1})).
enum class PayoffConvention { Levels, Increments };

using Payoff = std::function<double(std::span<const double>)>;

/// xi = phi(omega(t_1), ..., omega(t_n)) with declared value and Lipschitz bounds.
/// The bounds are spot-checked on random points of [-sample_radius, sample_radius]^n.
class CylinderFunctional {
public:
    struct Bounds {
        double value = 1.0;
        double lipschitz = 1.0;
        double sample_radius = 6.0;
    };

    CylinderFunctional(std::vector<double> times, Payoff payoff, Bounds bounds,
                       PayoffConvention convention = PayoffConvention::Levels);

    /// Single-time functional phi(omega(T)).
    static CylinderFunctional terminal(double horizon, std::function<double(double)> phi, Bounds bounds);

    const std::vector<double>& times() const noexcept { return times_; }
    std::size_t size() const noexcept { return times_.size(); }
    double horizon() const noexcept { return times_.back(); }
    const Bounds& bounds() const noexcept { return bounds_; }
    PayoffConvention convention() const noexcept { return convention_; }

    /// Evaluate from path levels omega(t_1..t_n), whatever the declared convention.
    double evaluate_levels(std::span<const double> levels) const;

    /// New functional g(xi) on the same times, e.g. |xi|^p. Bounds are supplied by the caller.
    CylinderFunctional transformed(std::function<double(double)> g, Bounds bounds) const;

private:
    std::vector<double> times_;
    Payoff payoff_;
    Bounds bounds_;
    PayoffConvention convention_;
};

/// Stable 64-bit mix of a seed and a stream index (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace gexpect
