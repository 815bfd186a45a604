#include "gexpect/gexp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "gexpect/csv.hpp"
#include "parallel.hpp"

namespace gexpect {

namespace {

std::size_t ipow(std::size_t base, std::size_t e) {
    std::size_t r = 1;
    while (e-- > 0) r *= base;
    return r;
}

double time_slack(double horizon) { return 1e-12 * std::max(1.0, horizon); }

/// Corners (combo index, weight) of the multilinear stencil around `params`.
std::vector<std::pair<std::size_t, double>> param_corners(const SpaceGrid& space, std::span<const double> params) {
    const std::size_t dims = params.size();
    const std::size_t n = space.n_points();
    std::vector<GridLocation> loc(dims);
    for (std::size_t d = 0; d < dims; ++d) loc[d] = space.locate(params[d]);
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t corner = 0; corner < (std::size_t{1} << dims); ++corner) {
        double w = 1.0;
        std::size_t index = 0;
        for (std::size_t d = 0; d < dims; ++d) {
            const bool upper = (corner >> (dims - 1 - d)) & 1u;
            w *= upper ? loc[d].weight : 1.0 - loc[d].weight;
            index = index * n + loc[d].index + (upper ? 1 : 0);
        }
        if (w != 0.0) out.emplace_back(index, w);
    }
    return out;
}

/// Multilinear interpolation of a row-major array with one axis per coordinate,
/// every axis on `space`.
double multilinear(std::span<const double> data, const SpaceGrid& space, std::span<const double> coords) {
    double acc = 0.0;
    for (const auto& [index, w] : param_corners(space, coords)) acc += w * data[index];
    return acc;
}

}  // namespace

CylinderRecursion::CylinderRecursion(CylinderFunctional xi, GParams band, PdeGrid grid)
    : CylinderRecursion(std::move(xi), band, std::move(grid), Options{}) {}

CylinderRecursion::CylinderRecursion(CylinderFunctional xi, GParams band, PdeGrid grid, Options options)
    : xi_(std::move(xi)), band_(band), grid_(std::move(grid)), options_(options) {
    const std::size_t n = xi_.size();
    if (n > options_.n_max) {
        std::ostringstream os;
        os << "cylinder functional has " << n << " times; the recursion supports at most " << options_.n_max;
        fail(ErrorKind::Capability, os.str());
    }
    const auto& space = grid_.space;
    const std::size_t np = space.n_points();
    double prev = 0.0;
    for (double t : xi_.times()) {
        steps_.push_back(cfl_time_grid(t - prev, space, band_, grid_.cfl_fraction));
        prev = t;
    }

    std::size_t stride = 1;
    if (options_.keep_surfaces) {
        std::size_t total = 0;
        for (std::size_t k = 1; k <= n; ++k) total += ipow(np, k) * (steps_[k - 1].n_steps() + 1);
        stride = std::max<std::size_t>(1, (total + options_.surface_budget - 1) / options_.surface_budget);
        std::size_t minimal = 0;
        for (std::size_t k = 1; k <= n; ++k) minimal += ipow(np, k) * 2;
        if (minimal > options_.surface_budget)
            fail(ErrorKind::Capability, "stored conditional surfaces exceed the memory budget");
        surfaces_.resize(n);
    }

    layers_.resize(n - 1);
    for (std::size_t k = n; k >= 1; --k) {
        const std::size_t combos = ipow(np, k - 1);
        std::vector<double> next_layer(combos);
        std::vector<double> first_row;
        const auto& tg = steps_[k - 1];
        if (options_.keep_surfaces) surfaces_[k - 1].resize(combos, ValueSurface(tg, space, band_, {0.0},
                                                                                     std::vector<double>(np)));
        detail::parallel_for(combos, grid_.threads, [&](std::size_t c) {
            const auto data = data_row(k, c);
            std::vector<double> last;
            if (options_.keep_surfaces) {
                auto surface = solve_gheat(data, band_, tg, space, {stride});
                const auto row = surface.row(surface.n_rows() - 1);
                last.assign(row.begin(), row.end());
                surfaces_[k - 1][c] = std::move(surface);
            } else {
                last = advance_gheat(data, band_, tg.dt(), space, tg.n_steps());
            }
            if (k == 1)
                first_row = std::move(last);
            else
                next_layer[c] = last[c % np];
        });
        if (k == 1)
            start_row_ = std::move(first_row);
        else
            layers_[k - 2] = std::move(next_layer);
    }
}

std::vector<double> CylinderRecursion::data_row(std::size_t level, std::size_t combo) const {
    const auto& space = grid_.space;
    const std::size_t np = space.n_points();
    if (level < xi_.size()) {
        const auto& layer = layers_[level - 1];
        return {layer.begin() + static_cast<std::ptrdiff_t>(combo * np),
                layer.begin() + static_cast<std::ptrdiff_t>((combo + 1) * np)};
    }
    std::vector<double> levels(level);
    std::size_t rest = combo;
    for (std::size_t d = level - 1; d-- > 0;) {
        levels[d] = space.x(rest % np);
        rest /= np;
    }
    std::vector<double> row(np);
    for (std::size_t i = 0; i < np; ++i) {
        levels[level - 1] = space.x(i);
        row[i] = xi_.evaluate_levels(levels);
        if (!std::isfinite(row[i])) fail(ErrorKind::Data, "cylinder payoff is non-finite on the space grid");
    }
    return row;
}

double CylinderRecursion::interpolate_layer(std::size_t level, std::span<const double> coords) const {
    if (level == 0) return multilinear(start_row_, grid_.space, coords);
    return multilinear(layers_[level - 1], grid_.space, coords);
}

double CylinderRecursion::solve_back(std::size_t level, std::size_t combo, double length, double x) const {
    if (options_.keep_surfaces) return surfaces_[level - 1][combo].value(length, x);
    const auto data = data_row(level, combo);
    if (length <= 0.0) return multilinear(data, grid_.space, std::span<const double>(&x, 1));
    const std::size_t steps = cfl_steps(length, grid_.space, band_, grid_.cfl_fraction);
    const auto row = advance_gheat(data, band_, length / static_cast<double>(steps), grid_.space, steps);
    return multilinear(row, grid_.space, std::span<const double>(&x, 1));
}

double CylinderRecursion::value() const {
    const double origin = 0.0;
    return interpolate_layer(0, std::span<const double>(&origin, 1));
}

std::size_t CylinderRecursion::level_at(double t) const {
    const auto& times = xi_.times();
    const double slack = time_slack(xi_.horizon());
    require(t >= -slack && t <= xi_.horizon() + slack, ErrorKind::Domain, "time outside [0, T]");
    std::size_t passed = 0;
    while (passed < times.size() && times[passed] <= t + slack) ++passed;
    return std::min(passed + 1, times.size());
}

double CylinderRecursion::conditional(double t, std::span<const double> prefix) const {
    const auto& times = xi_.times();
    const std::size_t n = times.size();
    const double slack = time_slack(xi_.horizon());
    require(t >= -slack && t <= xi_.horizon() + slack, ErrorKind::Domain, "time outside [0, T]");
    std::size_t j = 0;
    while (j < n && times[j] <= t + slack) ++j;
    const bool on_node = j > 0 && std::abs(times[j - 1] - t) <= slack;
    const std::size_t expected = on_node ? j : j + 1;
    if (prefix.size() != expected) {
        std::ostringstream os;
        os << "conditional expectation at t = " << t << " needs " << expected << " prefix values, got "
           << prefix.size();
        fail(ErrorKind::Usage, os.str());
    }
    for (double v : prefix) (void)grid_.space.locate(v);

    if (on_node && j == n) return xi_.evaluate_levels(prefix);
    if (on_node) return interpolate_layer(j, prefix);
    if (t <= slack) return interpolate_layer(0, prefix);

    const std::size_t k = j + 1;
    const double length = times[k - 1] - t;
    double acc = 0.0;
    for (const auto& [combo, w] : param_corners(grid_.space, prefix.first(k - 1)))
        acc += w * solve_back(k, combo, length, prefix[k - 1]);
    return acc;
}

ValueSurface::Local CylinderRecursion::local(double t, std::span<const double> params, double x) const {
    require(options_.keep_surfaces, ErrorKind::Usage, "path-level evaluation needs keep_surfaces");
    const std::size_t k = level_at(t);
    require(params.size() == k - 1, ErrorKind::Usage, "wrong number of earlier cylinder values");
    const double tau = std::max(0.0, xi_.times()[k - 1] - t);
    ValueSurface::Local acc{0.0, 0.0, 0.0};
    for (const auto& [combo, w] : param_corners(grid_.space, params)) {
        const auto l = surfaces_[k - 1][combo].local(tau, x);
        acc.u += w * l.u;
        acc.ux += w * l.ux;
        acc.uxx += w * l.uxx;
    }
    return acc;
}

const ValueSurface& CylinderRecursion::first_level_surface() const {
    require(options_.keep_surfaces, ErrorKind::Usage, "surfaces were not kept");
    return surfaces_[0][0];
}

// ---------------------------------------------------------------------------

double g_expectation(const CylinderFunctional& xi, const GParams& band, const PdeGrid& grid, std::size_t n_max) {
    CylinderRecursion::Options options;
    options.n_max = n_max;
    return CylinderRecursion(xi, band, grid, options).value();
}

double conditional_g_expectation(const CylinderFunctional& xi, double t, std::span<const double> prefix,
                                 const GParams& band, const PdeGrid& grid) {
    return CylinderRecursion(xi, band, grid).conditional(t, prefix);
}

double lp_norm(const CylinderFunctional& xi, double p, const GParams& band, const PdeGrid& grid) {
    require(p >= 1.0, ErrorKind::Domain, "L^p norm needs p >= 1");
    const auto& b = xi.bounds();
    const double value = std::pow(b.value, p);
    const double lipschitz = p * std::pow(b.value, p - 1.0) * b.lipschitz;
    const auto powered = xi.transformed([p](double v) { return std::pow(std::abs(v), p); },
                                        {value, lipschitz, b.sample_radius});
    return std::pow(std::max(0.0, g_expectation(powered, band, grid)), 1.0 / p);
}

void write_conditional_csv(const CylinderRecursion& recursion, std::ostream& os) {
    const auto& surface = recursion.first_level_surface();
    const auto fields = derivative_fields(surface);
    const double t1 = recursion.functional().times().front();
    CsvWriter csv(os, {"t", "x", "u", "du_dx", "d2u_dx2"});
    for (std::size_t r = surface.n_rows(); r-- > 0;)
        for (std::size_t i = 0; i < fields.n_points; ++i)
            csv.row(t1 - surface.tau(r), surface.space_grid().x(i), surface.at(r, i), fields.at(fields.du_dx, r, i),
                    fields.at(fields.d2u_dx2, r, i));
}

}  // namespace gexpect
