#include "gexpect/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace gexpect {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Data: return "data";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Extrapolation: return "extrapolation";
    case ErrorKind::Numeric: return "numeric";
    }
    return "unknown";
}

GParams::GParams(double sigma_lo, double sigma_hi) : lo_(sigma_lo), hi_(sigma_hi) {
    if (!(std::isfinite(sigma_lo) && std::isfinite(sigma_hi)) || !(sigma_lo > 0.0) || sigma_lo > sigma_hi) {
        std::ostringstream os;
        os << "volatility band requires 0 < sigma_lo <= sigma_hi, got [" << sigma_lo << ", " << sigma_hi << "]";
        fail(ErrorKind::Configuration, os.str());
    }
}

double g_value(const GParams& params, double a) noexcept {
    const double pos = a > 0.0 ? a : 0.0;
    const double neg = -a > 0.0 ? -a : 0.0;
    return 0.5 * (params.var_hi() * pos - params.var_lo() * neg);
}

double g_eps_value(const GParams& params, double eps, double a) {
    if (!(eps >= 0.0 && eps <= 0.5 * params.var_spread())) {
        std::ostringstream os;
        os << "G_eps requires 0 <= eps <= " << 0.5 * params.var_spread() << ", got " << eps;
        fail(ErrorKind::Domain, os.str());
    }
    return g_value(params, a) - 0.5 * eps * std::abs(a);
}

int delta_kalpha(int k, double alpha, double s) {
    require(k >= 1, ErrorKind::Domain, "delta_kalpha requires k >= 1");
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::Domain, "delta_kalpha requires 0 < alpha < 1");
    if (!(s > 0.0 && s <= 1.0)) {
        std::ostringstream os;
        os << "delta_kalpha is defined on (0, 1], got s = " << s;
        fail(ErrorKind::Domain, os.str());
    }
    const double scaled = s * static_cast<double>(k);
    auto i = static_cast<long>(std::ceil(scaled)) - 1;
    i = std::clamp<long>(i, 0, k - 1);
    return scaled <= static_cast<double>(i) + alpha ? 1 : -1;
}

double sign_vol(const GParams& params, double a) noexcept {
    return a >= 0.0 ? params.sigma_hi() : params.sigma_lo();
}

// ---------------------------------------------------------------------------

TimeGrid::TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
    require(std::isfinite(horizon) && horizon > 0.0, ErrorKind::Configuration, "time horizon must be positive");
    require(n_steps >= 1, ErrorKind::Configuration, "time grid needs at least one step");
}

bool TimeGrid::has_node(double t) const noexcept {
    const double pos = t / horizon_ * static_cast<double>(n_steps_);
    return t >= 0.0 && t <= horizon_ * (1.0 + 1e-12) && std::abs(pos - std::round(pos)) <= 1e-9;
}

std::size_t TimeGrid::nearest_index(double t) const noexcept {
    const double pos = t / horizon_ * static_cast<double>(n_steps_);
    const double r = std::clamp(std::round(pos), 0.0, static_cast<double>(n_steps_));
    return static_cast<std::size_t>(r);
}

std::size_t TimeGrid::node_index(double t) const {
    if (!has_node(t)) {
        std::ostringstream os;
        os << "time " << t << " is not a node of the grid (T=" << horizon_ << ", n_steps=" << n_steps_ << ")";
        fail(ErrorKind::Usage, os.str());
    }
    return nearest_index(t);
}

SpaceGrid::SpaceGrid(double x_min, double x_max, std::size_t n_points)
    : x_min_(x_min), x_max_(x_max), n_points_(n_points) {
    require(std::isfinite(x_min) && std::isfinite(x_max) && x_min < x_max, ErrorKind::Configuration,
            "space grid requires x_min < x_max");
    require(n_points >= 3, ErrorKind::Configuration, "space grid needs at least 3 points");
}

GridLocation SpaceGrid::locate(double x) const {
    if (!contains(x)) {
        std::ostringstream os;
        os << "x = " << x << " outside space grid [" << x_min_ << ", " << x_max_ << "]";
        fail(ErrorKind::Extrapolation, os.str());
    }
    const double pos = (x - x_min_) / dx();
    auto i = static_cast<std::size_t>(std::floor(pos));
    if (i >= n_points_ - 1) i = n_points_ - 2;
    return {i, pos - static_cast<double>(i)};
}

std::vector<double> SpaceGrid::nodes() const {
    std::vector<double> out(n_points_);
    for (std::size_t i = 0; i < n_points_; ++i) out[i] = x(i);
    return out;
}

SpaceGrid default_space_grid(const GParams& band, double horizon, std::size_t n_points, double margin) {
    const double half = 6.0 * band.sigma_hi() * std::sqrt(horizon) + margin;
    return SpaceGrid(-half, half, n_points);
}

// ---------------------------------------------------------------------------

namespace {

void check_bounds(const Payoff& payoff, std::size_t n, const CylinderFunctional::Bounds& b) {
    std::mt19937_64 rng(0x5eedu + n);
    std::uniform_real_distribution<double> box(-b.sample_radius, b.sample_radius);
    std::normal_distribution<double> nudge(0.0, 1e-3 * std::max(b.sample_radius, 1e-3));
    std::vector<double> x(n), y(n);
    for (int sample = 0; sample < 64; ++sample) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = box(rng);
            y[i] = std::clamp(x[i] + nudge(rng), -b.sample_radius, b.sample_radius);
        }
        const double fx = payoff(x);
        const double fy = payoff(y);
        if (!std::isfinite(fx) || !std::isfinite(fy)) fail(ErrorKind::Data, "cylinder payoff returned a non-finite value");
        if (std::abs(fx) > b.value * (1.0 + 1e-12)) {
            std::ostringstream os;
            os << "payoff value " << fx << " exceeds declared bound " << b.value;
            fail(ErrorKind::Domain, os.str());
        }
        double dist = 0.0;
        for (std::size_t i = 0; i < n; ++i) dist += std::abs(x[i] - y[i]);
        if (std::abs(fx - fy) > b.lipschitz * dist * (1.0 + 1e-6) + 1e-12) {
            std::ostringstream os;
            os << "payoff violates declared Lipschitz bound " << b.lipschitz;
            fail(ErrorKind::Domain, os.str());
        }
    }
}

}  // namespace

CylinderFunctional::CylinderFunctional(std::vector<double> times, Payoff payoff, Bounds bounds,
                                       PayoffConvention convention)
    : times_(std::move(times)), payoff_(std::move(payoff)), bounds_(bounds), convention_(convention) {
    require(!times_.empty(), ErrorKind::Usage, "cylinder functional needs at least one time");
    require(times_.front() > 0.0, ErrorKind::Usage, "cylinder times must be positive");
    for (std::size_t i = 1; i < times_.size(); ++i)
        require(times_[i] > times_[i - 1], ErrorKind::Usage, "cylinder times must be strictly increasing");
    require(static_cast<bool>(payoff_), ErrorKind::Usage, "cylinder payoff is empty");
    require(bounds_.value >= 0.0 && bounds_.lipschitz >= 0.0 && bounds_.sample_radius > 0.0, ErrorKind::Usage,
            "cylinder bounds must be non-negative");
    check_bounds(payoff_, times_.size(), bounds_);
}

CylinderFunctional CylinderFunctional::terminal(double horizon, std::function<double(double)> phi, Bounds bounds) {
    return CylinderFunctional({horizon}, [phi = std::move(phi)](std::span<const double> x) { return phi(x[0]); },
                              bounds);
}

double CylinderFunctional::evaluate_levels(std::span<const double> levels) const {
    require(levels.size() == times_.size(), ErrorKind::Usage, "cylinder evaluation with wrong number of values");
    if (convention_ == PayoffConvention::Levels) return payoff_(levels);
    std::vector<double> incr(levels.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        incr[i] = levels[i] - prev;
        prev = levels[i];
    }
    return payoff_(incr);
}

CylinderFunctional CylinderFunctional::transformed(std::function<double(double)> g, Bounds bounds) const {
    auto self = *this;
    Payoff composed = [self, g = std::move(g)](std::span<const double> levels) {
        return g(self.evaluate_levels(levels));
    };
    return CylinderFunctional(times_, std::move(composed), bounds, PayoffConvention::Levels);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gexpect
