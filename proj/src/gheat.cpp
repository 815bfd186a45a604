#include "gexpect/gheat.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "gexpect/csv.hpp"
#include "gexpect/kernels.hpp"

namespace gexpect {

ValueSurface::ValueSurface(TimeGrid time_grid, SpaceGrid space_grid, GParams band, std::vector<double> taus,
                           std::vector<double> values)
    : time_(time_grid), space_(space_grid), band_(band), taus_(std::move(taus)), values_(std::move(values)) {
    require(!taus_.empty(), ErrorKind::Usage, "value surface needs at least one row");
    require(values_.size() == taus_.size() * space_.n_points(), ErrorKind::Usage,
            "value surface storage does not match its grids");
    for (std::size_t r = 1; r < taus_.size(); ++r)
        require(taus_[r] > taus_[r - 1], ErrorKind::Usage, "surface rows must be increasing in tau");
}

ValueSurface::RowPair ValueSurface::bracket(double tau) const {
    const double slack = 1e-12 * std::max(1.0, taus_.back());
    if (tau < taus_.front() - slack || tau > taus_.back() + slack) {
        std::ostringstream os;
        os << "tau = " << tau << " outside stored rows [" << taus_.front() << ", " << taus_.back() << "]";
        fail(ErrorKind::Extrapolation, os.str());
    }
    if (taus_.size() == 1) return {0, 0, 0.0};
    auto it = std::upper_bound(taus_.begin(), taus_.end(), tau);
    std::size_t hi = static_cast<std::size_t>(it - taus_.begin());
    hi = std::clamp<std::size_t>(hi, 1, taus_.size() - 1);
    const std::size_t lo = hi - 1;
    const double w = std::clamp((tau - taus_[lo]) / (taus_[hi] - taus_[lo]), 0.0, 1.0);
    return {lo, hi, w};
}

double ValueSurface::value(double tau, double x) const {
    const auto loc = space_.locate(x);
    const auto rp = bracket(tau);
    auto on_row = [&](std::size_t r) {
        return (1.0 - loc.weight) * at(r, loc.index) + loc.weight * at(r, loc.index + 1);
    };
    if (rp.w == 0.0) return on_row(rp.lo);
    return (1.0 - rp.w) * on_row(rp.lo) + rp.w * on_row(rp.hi);
}

ValueSurface::Local ValueSurface::local_on_row(std::size_t r, GridLocation loc) const {
    const std::size_t n = space_.n_points();
    const double dx = space_.dx();
    auto slope = [&](std::size_t i) {
        if (i == 0) return (at(r, 1) - at(r, 0)) / dx;
        if (i + 1 == n) return (at(r, n - 1) - at(r, n - 2)) / dx;
        return (at(r, i + 1) - at(r, i - 1)) / (2.0 * dx);
    };
    auto curvature = [&](std::size_t i) {
        i = std::clamp<std::size_t>(i, 1, n - 2);
        return ((at(r, i - 1) - 2.0 * at(r, i)) + at(r, i + 1)) / (dx * dx);
    };
    const double w = loc.weight;
    const std::size_t i = loc.index;
    return {(1.0 - w) * at(r, i) + w * at(r, i + 1), (1.0 - w) * slope(i) + w * slope(i + 1),
            (1.0 - w) * curvature(i) + w * curvature(i + 1)};
}

ValueSurface::Local ValueSurface::local(double tau, double x) const {
    const auto loc = space_.locate(x);
    const auto rp = bracket(tau);
    const Local a = local_on_row(rp.lo, loc);
    if (rp.w == 0.0) return a;
    const Local b = local_on_row(rp.hi, loc);
    const double w = rp.w;
    return {(1.0 - w) * a.u + w * b.u, (1.0 - w) * a.ux + w * b.ux, (1.0 - w) * a.uxx + w * b.uxx};
}

// ---------------------------------------------------------------------------

std::size_t cfl_steps(double horizon, const SpaceGrid& space, const GParams& band, double fraction) {
    require(fraction > 0.0 && fraction <= 1.0, ErrorKind::Configuration, "CFL fraction must lie in (0, 1]");
    const double dt_max = fraction * space.dx() * space.dx() / band.var_hi();
    // tiny slack so that an exactly CFL-maximal grid is not rounded up by one step
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(horizon / dt_max * (1.0 - 1e-12))));
}

TimeGrid cfl_time_grid(double horizon, const SpaceGrid& space, const GParams& band, double fraction) {
    return TimeGrid(horizon, cfl_steps(horizon, space, band, fraction));
}

void check_cfl(const TimeGrid& time, const SpaceGrid& space, const GParams& band) {
    const double limit = space.dx() * space.dx() / band.var_hi();
    if (time.dt() > limit * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "CFL violated: dt = " << time.dt() << " > dx^2/sigma_hi^2 = " << limit << " (need at least "
           << cfl_steps(time.horizon(), space, band) << " steps)";
        fail(ErrorKind::Configuration, os.str());
    }
}

namespace {

void check_payoff(std::span<const double> payoff, const SpaceGrid& space) {
    require(payoff.size() == space.n_points(), ErrorKind::Usage, "payoff samples do not match the space grid");
    for (double v : payoff)
        if (!std::isfinite(v)) fail(ErrorKind::Data, "payoff contains non-finite values");
}

kernels::GHeatCoeffs coeffs(double dt, const SpaceGrid& space, const GParams& band) {
    return {dt, 1.0 / (space.dx() * space.dx()), band.var_lo(), band.var_hi()};
}

}  // namespace

ValueSurface solve_gheat(std::span<const double> payoff, const GParams& band, const TimeGrid& time,
                         const SpaceGrid& space, GHeatOptions options) {
    check_cfl(time, space, band);
    check_payoff(payoff, space);
    const std::size_t stride = std::max<std::size_t>(1, options.snapshot_stride);
    const std::size_t n = space.n_points();
    const auto c = coeffs(time.dt(), space, band);

    std::vector<double> taus{0.0};
    std::vector<double> values(payoff.begin(), payoff.end());
    std::vector<double> cur(payoff.begin(), payoff.end());
    std::vector<double> next(n);
    for (std::size_t k = 1; k <= time.n_steps(); ++k) {
        kernels::gheat_step(cur, {}, next, c);
        cur.swap(next);
        if (k % stride == 0 || k == time.n_steps()) {
            taus.push_back(time.time(k));
            values.insert(values.end(), cur.begin(), cur.end());
        }
    }
    return ValueSurface(time, space, band, std::move(taus), std::move(values));
}

ValueSurface solve_gheat(const std::function<double(double)>& payoff, const GParams& band, const TimeGrid& time,
                         const SpaceGrid& space, GHeatOptions options) {
    std::vector<double> samples(space.n_points());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = payoff(space.x(i));
    return solve_gheat(samples, band, time, space, options);
}

std::vector<double> advance_gheat(std::span<const double> payoff, const GParams& band, double dt,
                                  const SpaceGrid& space, std::size_t n_steps) {
    check_payoff(payoff, space);
    const double limit = space.dx() * space.dx() / band.var_hi();
    require(dt <= limit * (1.0 + 1e-12), ErrorKind::Configuration, "CFL violated in advance_gheat");
    const auto c = coeffs(dt, space, band);
    std::vector<double> cur(payoff.begin(), payoff.end());
    std::vector<double> next(cur.size());
    for (std::size_t k = 0; k < n_steps; ++k) {
        kernels::gheat_step(cur, {}, next, c);
        cur.swap(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------

DerivativeFields derivative_fields(const ValueSurface& surface) {
    const std::size_t rows = surface.n_rows();
    const std::size_t n = surface.space_grid().n_points();
    const double dx = surface.space_grid().dx();
    DerivativeFields f;
    f.n_rows = rows;
    f.n_points = n;
    f.du_dtau.assign(rows * n, 0.0);
    f.du_dx.assign(rows * n, 0.0);
    f.d2u_dx2.assign(rows * n, 0.0);

    for (std::size_t r = 0; r < rows; ++r) {
        const auto u = surface.row(r);
        kernels::second_difference(u, std::span<double>(f.d2u_dx2).subspan(r * n, n), 1.0 / (dx * dx));
        double* ux = f.du_dx.data() + r * n;
        for (std::size_t i = 1; i + 1 < n; ++i) ux[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
        ux[0] = (u[1] - u[0]) / dx;
        ux[n - 1] = (u[n - 1] - u[n - 2]) / dx;

        double* ut = f.du_dtau.data() + r * n;
        if (rows == 1) continue;
        const std::size_t lo = r == 0 ? 0 : r - 1;
        const std::size_t hi = r + 1 == rows ? r : r + 1;
        const double span_tau = surface.tau(hi) - surface.tau(lo);
        for (std::size_t i = 0; i < n; ++i) ut[i] = (surface.at(hi, i) - surface.at(lo, i)) / span_tau;
    }
    return f;
}

double max_pde_residual(const ValueSurface& surface, const DerivativeFields& fields, InteriorRegion region) {
    const auto& space = surface.space_grid();
    const double margin = region.x_margin_fraction * (space.x_max() - space.x_min());
    double worst = 0.0;
    for (std::size_t r = 0; r < fields.n_rows; ++r) {
        if (surface.tau(r) < region.tau_from) continue;
        for (std::size_t i = 1; i + 1 < fields.n_points; ++i) {
            const double x = space.x(i);
            if (x < space.x_min() + margin || x > space.x_max() - margin) continue;
            const double res =
                fields.at(fields.du_dtau, r, i) - g_value(surface.band(), fields.at(fields.d2u_dx2, r, i));
            worst = std::max(worst, std::abs(res));
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------

VolatilityField::VolatilityField(const ValueSurface& surface) : surface_(surface) {
    const std::size_t n = surface_.space_grid().n_points();
    const double dx = surface_.space_grid().dx();
    levels_.resize(surface_.n_rows() * n);
    std::vector<double> curv(n);
    for (std::size_t r = 0; r < surface_.n_rows(); ++r) {
        kernels::second_difference(surface_.row(r), curv, 1.0 / (dx * dx));
        for (std::size_t i = 0; i < n; ++i) levels_[r * n + i] = sign_vol(surface_.band(), curv[i]);
    }
}

double VolatilityField::at(double tau, double x) const {
    const auto& space = surface_.space_grid();
    return sign_vol(surface_.band(), surface_.local(tau, std::clamp(x, space.x_min(), space.x_max())).uxx);
}

VolatilityField feedback_field(const ValueSurface& surface) { return VolatilityField(surface); }

void write_surface_csv(const ValueSurface& surface, std::ostream& os) {
    const auto fields = derivative_fields(surface);
    CsvWriter csv(os, {"t", "x", "u", "du_dx", "d2u_dx2"});
    for (std::size_t r = 0; r < surface.n_rows(); ++r)
        for (std::size_t i = 0; i < fields.n_points; ++i)
            csv.row(surface.tau(r), surface.space_grid().x(i), surface.at(r, i), fields.at(fields.du_dx, r, i),
                    fields.at(fields.d2u_dx2, r, i));
}

}  // namespace gexpect
