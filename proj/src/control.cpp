#include "gexpect/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <variant>

#include "gexpect/gheat.hpp"

namespace gexpect {

namespace {

struct ConstantKind {
    double sigma;
};

struct StepKind {
    std::vector<double> breakpoints;
    std::vector<StepRule> rules;
};

struct SelfDependentKind {
    double horizon;
    std::vector<BlockRule> rules;
};

struct FeedbackKind {
    std::shared_ptr<const VolatilityField> field;
    double horizon;
};

struct PerturbedKind {
    std::shared_ptr<const ControlProcess> base;
    PerturbationSchedule schedule;
};

bool is_multiple(double value, double unit) {
    const double q = value / unit;
    return std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, std::abs(q));
}

}  // namespace

struct ControlProcess::Impl {
    GParams band;
    std::variant<ConstantKind, StepKind, SelfDependentKind, FeedbackKind, PerturbedKind> kind;
};

// ---------------------------------------------------------------------------

PerturbationSchedule::PerturbationSchedule(int refinement, double alpha,
                                           std::shared_ptr<const ControlProcess> sub_control)
    : refinement_(refinement), alpha_(alpha), sub_(std::move(sub_control)) {
    require(refinement >= 0 && refinement <= 20, ErrorKind::Domain, "perturbation refinement must lie in [0, 20]");
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::Domain, "perturbation alpha must lie in (0, 1)");
    require(sub_ != nullptr, ErrorKind::Usage, "perturbation needs a sub-control");
}

PerturbationSchedule PerturbationSchedule::from_epsilon(int refinement, double eps, const GParams& band,
                                                        std::shared_ptr<const ControlProcess> sub_control) {
    if (!(eps > 0.0 && eps < band.var_spread())) {
        std::ostringstream os;
        os << "epsilon must lie in (0, sigma_hi^2 - sigma_lo^2) = (0, " << band.var_spread() << "), got " << eps;
        fail(ErrorKind::Domain, os.str());
    }
    return PerturbationSchedule(refinement, eps / band.var_spread(), std::move(sub_control));
}

double compensating_level(double xi_abs, double alpha_piece_integral, double sub_block_length, double alpha) {
    const double sq = (xi_abs * xi_abs - alpha_piece_integral / sub_block_length) / (1.0 - alpha);
    return std::sqrt(std::max(sq, 0.0));
}

// ---------------------------------------------------------------------------

ControlProcess ControlProcess::constant(const GParams& band, double sigma) {
    if (!(sigma >= band.sigma_lo() && sigma <= band.sigma_hi())) {
        std::ostringstream os;
        os << "constant control " << sigma << " outside band [" << band.sigma_lo() << ", " << band.sigma_hi() << "]";
        fail(ErrorKind::Domain, os.str());
    }
    return ControlProcess(std::make_shared<const Impl>(Impl{band, ConstantKind{sigma}}));
}

ControlProcess ControlProcess::step(const GParams& band, std::vector<double> breakpoints,
                                    std::vector<StepRule> rules) {
    require(breakpoints.size() >= 2 && breakpoints.front() == 0.0, ErrorKind::Usage,
            "step control needs breakpoints 0 = t_0 < ... < t_n");
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
        require(breakpoints[i] > breakpoints[i - 1], ErrorKind::Usage, "step breakpoints must increase");
    require(rules.size() + 1 == breakpoints.size(), ErrorKind::Usage, "step control needs one rule per interval");
    return ControlProcess(
        std::make_shared<const Impl>(Impl{band, StepKind{std::move(breakpoints), std::move(rules)}}));
}

ControlProcess ControlProcess::self_dependent(const GParams& band, double horizon, std::vector<BlockRule> rules) {
    require(horizon > 0.0, ErrorKind::Usage, "self-dependent control needs a positive horizon");
    require(!rules.empty(), ErrorKind::Usage, "self-dependent control needs at least one block");
    return ControlProcess(std::make_shared<const Impl>(Impl{band, SelfDependentKind{horizon, std::move(rules)}}));
}

ControlProcess ControlProcess::feedback(std::shared_ptr<const VolatilityField> field, double horizon) {
    require(field != nullptr, ErrorKind::Usage, "feedback control needs a volatility field");
    require(horizon > 0.0, ErrorKind::Usage, "feedback control needs a positive horizon");
    const GParams band = field->surface().band();
    return ControlProcess(std::make_shared<const Impl>(Impl{band, FeedbackKind{std::move(field), horizon}}));
}

ControlProcess ControlProcess::bang_bang(const GParams& band, std::vector<double> breakpoints,
                                         std::vector<StepRule> eta) {
    std::vector<StepRule> rules;
    rules.reserve(eta.size());
    for (auto& e : eta)
        rules.push_back([band, e = std::move(e)](const PathView& v) { return sign_vol(band, e(v)); });
    return step(band, std::move(breakpoints), std::move(rules));
}

ControlProcess ControlProcess::perturbed(const ControlProcess& base, const PerturbationSchedule& schedule) {
    return ControlProcess(std::make_shared<const Impl>(
        Impl{base.band(), PerturbedKind{std::make_shared<const ControlProcess>(base), schedule}}));
}

ControlProcess::Kind ControlProcess::kind() const noexcept {
    return static_cast<Kind>(impl_->kind.index());
}

const GParams& ControlProcess::band() const noexcept { return impl_->band; }

std::string ControlProcess::describe() const {
    std::ostringstream os;
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, ConstantKind>) {
                os << "constant(" << k.sigma << ")";
            } else if constexpr (std::is_same_v<K, StepKind>) {
                os << "step(" << k.rules.size() << " intervals)";
            } else if constexpr (std::is_same_v<K, SelfDependentKind>) {
                os << "self-dependent(m=" << k.rules.size() << ")";
            } else if constexpr (std::is_same_v<K, FeedbackKind>) {
                os << "feedback";
            } else {
                os << "perturbed(n=" << k.schedule.refinement() << ",alpha=" << k.schedule.alpha() << ",sub="
                   << k.schedule.sub_control().describe() << ")";
            }
        },
        impl_->kind);
    return os.str();
}

std::size_t ControlProcess::blocks() const {
    if (const auto* sd = std::get_if<SelfDependentKind>(&impl_->kind)) return sd->rules.size();
    if (const auto* p = std::get_if<PerturbedKind>(&impl_->kind)) return p->base->blocks();
    fail(ErrorKind::Usage, "control is not self-dependent");
}

double ControlProcess::horizon() const {
    if (const auto* sd = std::get_if<SelfDependentKind>(&impl_->kind)) return sd->horizon;
    if (const auto* p = std::get_if<PerturbedKind>(&impl_->kind)) return p->base->horizon();
    if (const auto* f = std::get_if<FeedbackKind>(&impl_->kind)) return f->horizon;
    if (const auto* s = std::get_if<StepKind>(&impl_->kind)) return s->breakpoints.back();
    fail(ErrorKind::Usage, "constant control has no intrinsic horizon");
}

const PerturbationSchedule* ControlProcess::schedule() const noexcept {
    const auto* p = std::get_if<PerturbedKind>(&impl_->kind);
    return p ? &p->schedule : nullptr;
}

const ControlProcess* ControlProcess::base() const noexcept {
    const auto* p = std::get_if<PerturbedKind>(&impl_->kind);
    return p ? p->base.get() : nullptr;
}

double ControlProcess::block_level(std::size_t block, const PathView& view) const {
    if (const auto* p = std::get_if<PerturbedKind>(&impl_->kind)) return p->base->block_level(block, view);
    const auto* sd = std::get_if<SelfDependentKind>(&impl_->kind);
    require(sd != nullptr, ErrorKind::Usage, "block_level needs a self-dependent control");
    const std::size_t m = sd->rules.size();
    require(block < m, ErrorKind::Usage, "block index out of range");
    const std::size_t per_block = view.grid->n_steps() / m;
    require(view.step >= block * per_block, ErrorKind::Usage, "block level requested before the block starts");
    std::vector<double> incr(block);
    for (std::size_t j = 0; j < block; ++j) incr[j] = view.b[(j + 1) * per_block] - view.b[j * per_block];
    return std::abs(sd->rules[block](incr));
}

void ControlProcess::check_grid(const TimeGrid& grid) const {
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, StepKind>) {
                for (double t : k.breakpoints)
                    if (t <= grid.horizon() * (1.0 + 1e-12)) (void)grid.node_index(std::min(t, grid.horizon()));
            } else if constexpr (std::is_same_v<K, SelfDependentKind>) {
                require(std::abs(grid.horizon() - k.horizon) <= 1e-12 * k.horizon, ErrorKind::Usage,
                        "self-dependent control horizon differs from the simulation horizon");
                require(grid.n_steps() % k.rules.size() == 0, ErrorKind::Usage,
                        "simulation steps must be a multiple of the number of control blocks");
            } else if constexpr (std::is_same_v<K, FeedbackKind>) {
                const auto& s = k.field->surface();
                if (grid.horizon() > k.horizon * (1.0 + 1e-12) ||
                    k.horizon > s.tau(s.n_rows() - 1) * (1.0 + 1e-12)) {
                    fail(ErrorKind::Extrapolation, "feedback surface does not cover the simulation horizon");
                }
            } else if constexpr (std::is_same_v<K, PerturbedKind>) {
                k.base->check_grid(grid);
                const std::size_t subs = k.base->blocks() << k.schedule.refinement();
                require(grid.n_steps() % subs == 0, ErrorKind::Usage,
                        "simulation steps must be a multiple of 2^n m for a perturbed control");
                const double per_sub = static_cast<double>(grid.n_steps() / subs);
                require(is_multiple(k.schedule.alpha() * per_sub, 1.0), ErrorKind::Usage,
                        "alpha times the steps per sub-block must be an integer");
                k.schedule.sub_control().check_grid(grid);
            }
        },
        impl_->kind);
}

double ControlProcess::level(const PathView& view) const {
    const GParams& band = impl_->band;
    const double raw = std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, ConstantKind>) {
                return k.sigma;
            } else if constexpr (std::is_same_v<K, StepKind>) {
                const double t = view.time();
                auto it = std::upper_bound(k.breakpoints.begin(), k.breakpoints.end(), t * (1.0 + 1e-12) + 1e-15);
                std::size_t j = static_cast<std::size_t>(it - k.breakpoints.begin());
                j = std::clamp<std::size_t>(j, 1, k.rules.size()) - 1;
                const std::size_t start = view.grid->nearest_index(k.breakpoints[j]);
                return k.rules[j](view.truncated(std::min(start, view.step)));
            } else if constexpr (std::is_same_v<K, SelfDependentKind>) {
                const std::size_t per_block = view.grid->n_steps() / k.rules.size();
                return block_level(view.step / per_block, view);
            } else if constexpr (std::is_same_v<K, FeedbackKind>) {
                return k.field->at(k.horizon - view.time(), view.level());
            } else {
                const ControlProcess& base = *k.base;
                const auto& sch = k.schedule;
                const std::size_t m = base.blocks();
                const std::size_t subs = m << sch.refinement();
                const std::size_t per_sub = view.grid->n_steps() / subs;
                const std::size_t per_block = view.grid->n_steps() / m;
                const auto alpha_steps = static_cast<std::size_t>(std::llround(sch.alpha() * per_sub));
                const std::size_t sub_start = (view.step / per_sub) * per_sub;
                if (view.step - sub_start < alpha_steps) return sch.sub_control().level(view);

                const std::size_t block = view.step / per_block;
                const double xi = base.block_level(block, view);
                const double eps = sch.epsilon(band);
                const double xi2 = xi * xi;
                const double slack = 1e-12 * band.var_hi();
                if (xi2 < band.var_lo() + eps - slack || xi2 > band.var_hi() - eps + slack) {
                    std::ostringstream os;
                    os << "perturbation precondition violated on block " << block << ": |xi|^2 = " << xi2
                       << " outside [" << band.var_lo() + eps << ", " << band.var_hi() - eps << "]";
                    fail(ErrorKind::Domain, os.str());
                }
                const double length = view.grid->horizon() / static_cast<double>(subs);
                const double piece = view.qv[sub_start + alpha_steps] - view.qv[sub_start];
                return compensating_level(xi, piece, length, sch.alpha());
            }
        },
        impl_->kind);

    const double tol = 1e-12 * band.sigma_hi();
    if (!(raw >= band.sigma_lo() - tol && raw <= band.sigma_hi() + tol)) {
        std::ostringstream os;
        os << describe() << " produced level " << raw << " outside [" << band.sigma_lo() << ", " << band.sigma_hi()
           << "] at t = " << view.time();
        fail(ErrorKind::Domain, os.str());
    }
    return std::clamp(raw, band.sigma_lo(), band.sigma_hi());
}

}  // namespace gexpect
