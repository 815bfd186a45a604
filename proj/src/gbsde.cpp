#include "gexpect/gbsde.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

#include "gexpect/csv.hpp"
#include "gexpect/kernels.hpp"
#include "parallel.hpp"

namespace gexpect {

namespace {

constexpr double kFdStep = 1e-4;
constexpr std::size_t kPathChunk = 64;

template <class Body>
void for_paths(std::size_t n_paths, Body&& body) {
    const std::size_t chunks = (n_paths + kPathChunk - 1) / kPathChunk;
    detail::parallel_for(chunks, 0, [&](std::size_t c) {
        const std::size_t end = std::min(n_paths, (c + 1) * kPathChunk);
        for (std::size_t p = c * kPathChunk; p < end; ++p) body(p);
    });
}

void centred_slope(std::span<const double> u, std::span<double> ux, double dx) {
    const std::size_t n = u.size();
    for (std::size_t i = 1; i + 1 < n; ++i) ux[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
    ux[0] = (u[1] - u[0]) / dx;
    ux[n - 1] = (u[n - 1] - u[n - 2]) / dx;
}

}  // namespace

CylinderPathProcess::CylinderPathProcess(std::vector<double> partition, std::vector<Piece> pieces,
                                         double stitch_tolerance)
    : partition_(std::move(partition)), pieces_(std::move(pieces)) {
    require(partition_.size() >= 2 && partition_.front() == 0.0, ErrorKind::Usage,
            "partition must start at 0 and contain at least one interval");
    for (std::size_t k = 1; k < partition_.size(); ++k)
        require(partition_[k] > partition_[k - 1], ErrorKind::Usage, "partition must be strictly increasing");
    require(pieces_.size() + 1 == partition_.size(), ErrorKind::Usage, "one piece per partition interval");

    std::mt19937_64 rng(0x571c4u);
    std::uniform_real_distribution<double> box(-2.0, 2.0);
    for (std::size_t k = 1; k < pieces_.size(); ++k) {
        std::vector<double> params(k);
        for (int sample = 0; sample < 16; ++sample) {
            for (auto& v : params) v = box(rng);
            const double x = params.back();
            const double after = pieces_[k](partition_[k], x, params);
            const double before = pieces_[k - 1](partition_[k], x, std::span<const double>(params).first(k - 1));
            if (std::abs(after - before) > stitch_tolerance * (1.0 + std::abs(before))) {
                std::ostringstream os;
                os << "cylinder process is not stitched at t_" << k << " = " << partition_[k] << ": " << before
                   << " vs " << after;
                fail(ErrorKind::Domain, os.str());
            }
        }
    }
}

CylinderPathProcess CylinderPathProcess::markov(double horizon, std::function<double(double, double)> f) {
    return CylinderPathProcess({0.0, horizon},
                               {[f = std::move(f)](double t, double x, std::span<const double>) { return f(t, x); }});
}

CylinderPathProcess CylinderPathProcess::from_surface(const ValueSurface& surface) {
    const double horizon = surface.time_grid().horizon();
    return markov(horizon, [surface, horizon](double t, double x) { return surface.value(horizon - t, x); });
}

std::size_t CylinderPathProcess::interval(double t) const {
    const double slack = 1e-12 * std::max(1.0, horizon());
    require(t >= -slack && t <= horizon() + slack, ErrorKind::Domain, "time outside the partition");
    std::size_t k = 0;
    while (k + 2 < partition_.size() && partition_[k + 1] <= t + slack) ++k;
    return k;
}

double CylinderPathProcess::value(double t, double x, std::span<const double> params) const {
    const std::size_t k = interval(t);
    require(params.size() == k, ErrorKind::Usage, "wrong number of earlier path values");
    return pieces_[k](t, x, params);
}

CylinderDerivatives cylinder_derivatives(const CylinderPathProcess& u, double t, std::span<const double> prefix) {
    const std::size_t k = u.interval(t);
    if (prefix.size() != k + 1) {
        std::ostringstream os;
        os << "prefix at t = " << t << " needs " << k + 1 << " values (omega(t) and " << k
           << " earlier values), got " << prefix.size();
        fail(ErrorKind::Usage, os.str());
    }
    const double x = prefix[0];
    const auto params = prefix.subspan(1);
    const double lo = u.partition()[k];
    const double hi = u.partition()[k + 1];
    CylinderDerivatives d;
    d.step_x = kFdStep * std::max(1.0, std::abs(x));
    d.step_t = std::min(kFdStep * std::max(1.0, std::abs(t)), 0.25 * (hi - lo));
    auto f = [&](double s, double y) { return u.value(std::clamp(s, lo, hi), y, params); };
    const double hx = d.step_x;
    const double ht = d.step_t;
    const double f0 = f(t, x);
    const double fp = f(t, x + hx);
    const double fm = f(t, x - hx);
    d.dx = (fp - fm) / (2.0 * hx);
    d.dxx = ((fm - 2.0 * f0) + fp) / (hx * hx);
    if (t - ht >= lo && t + ht <= hi)
        d.dt = (f(t + ht, x) - f(t - ht, x)) / (2.0 * ht);
    else if (t + 2.0 * ht <= hi)
        d.dt = ((-3.0 * f0 + 4.0 * f(t + ht, x)) - f(t + 2.0 * ht, x)) / (2.0 * ht);
    else
        d.dt = ((3.0 * f0 - 4.0 * f(t - ht, x)) + f(t - 2.0 * ht, x)) / (2.0 * ht);
    return d;
}

double a_g(const CylinderPathProcess& u, const GParams& band, double t, std::span<const double> prefix) {
    const auto d = cylinder_derivatives(u, t, prefix);
    return d.dt + g_value(band, d.dxx);
}

// ---------------------------------------------------------------------------

GBSDEProblem::GBSDEProblem(std::function<double(double)> terminal_, Driver driver_, double lipschitz_,
                           GParams band_, double horizon_)
    : terminal(std::move(terminal_)), driver(std::move(driver_)), lipschitz(lipschitz_), band(band_),
      horizon(horizon_) {
    require(static_cast<bool>(terminal) && static_cast<bool>(driver), ErrorKind::Usage,
            "G-BSDE needs a terminal payoff and a driver");
    require(lipschitz >= 0.0, ErrorKind::Domain, "driver Lipschitz constant must be non-negative");
    require(horizon > 0.0, ErrorKind::Domain, "horizon must be positive");
    std::mt19937_64 rng(0xb5deu);
    std::uniform_real_distribution<double> time(0.0, horizon);
    std::uniform_real_distribution<double> box(-10.0, 10.0);
    for (int sample = 0; sample < 64; ++sample) {
        const double t = time(rng);
        const double y1 = box(rng), y2 = box(rng), z1 = box(rng), z2 = box(rng);
        const double f1 = driver(t, y1, z1);
        const double f2 = driver(t, y2, z2);
        if (!std::isfinite(f1) || !std::isfinite(f2)) fail(ErrorKind::Data, "driver returned a non-finite value");
        if (std::abs(f1 - f2) > lipschitz * (std::abs(y1 - y2) + std::abs(z1 - z2)) * (1.0 + 1e-9) + 1e-12) {
            std::ostringstream os;
            os << "driver violates the declared Lipschitz constant " << lipschitz << " at t = " << t;
            fail(ErrorKind::Domain, os.str());
        }
    }
}

TimeGrid stable_time_grid(const GBSDEProblem& problem, const SpaceGrid& space, double cfl_fraction) {
    const std::size_t cfl = cfl_steps(problem.horizon, space, problem.band, cfl_fraction);
    const double coupling = problem.horizon * problem.lipschitz * (1.0 + 1.0 / space.dx());
    const auto driver_steps = static_cast<std::size_t>(std::ceil(coupling * (1.0 - 1e-12)));
    return TimeGrid(problem.horizon, std::max(cfl, driver_steps));
}

namespace {

/// One backward sweep. When `frozen` is given, the driver is evaluated on its rows
/// (Picard); otherwise on the row being advanced.
std::vector<double> sweep(const GBSDEProblem& problem, const TimeGrid& time, const SpaceGrid& space,
                          std::span<const double> data, const std::vector<double>* frozen) {
    const std::size_t n = space.n_points();
    const std::size_t steps = time.n_steps();
    const double dt = time.dt();
    const double dx = space.dx();
    const kernels::GHeatCoeffs c{dt, 1.0 / (dx * dx), problem.band.var_lo(), problem.band.var_hi()};
    std::vector<double> values(data.begin(), data.end());
    values.reserve((steps + 1) * n);
    std::vector<double> cur(data.begin(), data.end()), next(n), ux(n), src(n);
    for (std::size_t r = 0; r < steps; ++r) {
        const double t = problem.horizon - time.time(r);
        const double* base = frozen ? frozen->data() + r * n : cur.data();
        const std::span<const double> arg(base, n);
        centred_slope(arg, ux, dx);
        for (std::size_t i = 0; i < n; ++i) src[i] = problem.driver(t, arg[i], ux[i]);
        kernels::gheat_step(cur, src, next, c);
        next[0] = cur[0] + dt * src[0];
        next[n - 1] = cur[n - 1] + dt * src[n - 1];
        cur.swap(next);
        values.insert(values.end(), cur.begin(), cur.end());
    }
    return values;
}

}  // namespace

GBSDESolution solve_ppde(const GBSDEProblem& problem, const TimeGrid& time, const SpaceGrid& space,
                         PpdeOptions options) {
    require(std::abs(time.horizon() - problem.horizon) <= 1e-12 * std::max(1.0, problem.horizon), ErrorKind::Usage,
            "time grid horizon differs from the problem horizon");
    check_cfl(time, space, problem.band);
    const double coupling = time.dt() * problem.lipschitz * (1.0 + 1.0 / space.dx());
    if (coupling > 1.0 + 1e-12) {
        std::ostringstream os;
        os << "explicit driver coupling dt L (1 + 1/dx) = " << coupling << " exceeds 1 (need at least "
           << stable_time_grid(problem, space).n_steps() << " steps)";
        fail(ErrorKind::Configuration, os.str());
    }
    const std::size_t n = space.n_points();
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        data[i] = problem.terminal(space.x(i));
        if (!std::isfinite(data[i])) fail(ErrorKind::Data, "terminal payoff is non-finite on the grid");
    }

    GBSDESolution out{ValueSurface(time, space, problem.band, {0.0}, data), 0, 0.0};
    std::vector<double> values;
    if (!options.picard) {
        values = sweep(problem, time, space, data, nullptr);
    } else {
        const GBSDEProblem heat(problem.terminal, [](double, double, double) { return 0.0; }, 0.0, problem.band,
                                problem.horizon);
        values = sweep(heat, time, space, data, nullptr);
        for (std::size_t it = 0; it < options.max_picard_iterations; ++it) {
            auto next = sweep(problem, time, space, data, &values);
            double change = 0.0;
            for (std::size_t i = 0; i < next.size(); ++i) change = std::max(change, std::abs(next[i] - values[i]));
            values.swap(next);
            out.picard_iterations = it + 1;
            out.picard_change = change;
            if (change <= options.picard_tolerance) break;
        }
    }
    std::vector<double> taus(time.n_steps() + 1);
    for (std::size_t r = 0; r <= time.n_steps(); ++r) taus[r] = time.time(r);
    out.y = ValueSurface(time, space, problem.band, std::move(taus), std::move(values));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_bundle(const GBSDEProblem& problem, const PathBundle& bundle) {
    require(std::abs(bundle.grid.horizon() - problem.horizon) <= 1e-12 * std::max(1.0, problem.horizon),
            ErrorKind::Usage, "bundle horizon differs from the problem horizon");
}

}  // namespace

BsdeResidualReport gbsde_residual(const GBSDESolution& solution, const GBSDEProblem& problem,
                                  const PathBundle& bundle) {
    check_bundle(problem, bundle);
    const auto& tg = bundle.grid;
    const std::size_t n = tg.n_steps();
    const std::size_t n_paths = bundle.n_paths();
    const double dt = tg.dt();
    const double T = problem.horizon;
    BsdeResidualReport out;
    out.y = PathMatrix(n_paths, n + 1);
    out.z = PathMatrix(n_paths, n + 1);
    out.k = PathMatrix(n_paths, n + 1);
    std::vector<double> residual(n_paths, 0.0), k_increase(n_paths, -INFINITY);

    for_paths(n_paths, [&](std::size_t p) {
        std::vector<double> curv(n), inc(n), f(n), integ(n);
        for (std::size_t j = 0; j <= n; ++j) {
            const auto loc = solution.y.local(T - tg.time(j), bundle.b(p, j));
            out.y(p, j) = loc.u;
            out.z(p, j) = loc.ux;
            if (j < n) {
                curv[j] = loc.uxx;
                f[j] = problem.driver(tg.time(j), loc.u, loc.ux);
                const double db = bundle.b(p, j + 1) - bundle.b(p, j);
                const double dq = (bundle.h(p, j) * bundle.h(p, j)) * dt;
                integ[j] = loc.ux * db + 0.5 * loc.uxx * (db * db - dq);
            }
        }
        kernels::k_increments(curv, bundle.h.row(p), inc, dt, problem.band.var_lo(), problem.band.var_hi());
        double k_acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            k_acc += 0.5 * inc[j];
            out.k(p, j + 1) = k_acc;
            k_increase[p] = std::max(k_increase[p], 0.5 * inc[j]);
        }
        // backward sums from T
        const double xi = problem.terminal(bundle.b(p, n));
        double f_tail = 0.0, i_tail = 0.0;
        double worst = std::abs(out.y(p, n) - xi);
        for (std::size_t j = n; j-- > 0;) {
            f_tail += f[j] * dt;
            i_tail += integ[j];
            const double rhs = xi + f_tail - i_tail - (out.k(p, n) - out.k(p, j));
            worst = std::max(worst, std::abs(out.y(p, j) - rhs));
        }
        residual[p] = worst;
    });

    out.k_starts_at_zero = true;
    out.max_k_increase = n == 0 ? 0.0 : -INFINITY;
    for (std::size_t p = 0; p < n_paths; ++p) {
        out.max_residual = std::max(out.max_residual, residual[p]);
        out.k_starts_at_zero = out.k_starts_at_zero && out.k(p, 0) == 0.0;
        out.max_k_increase = std::max(out.max_k_increase, k_increase[p]);
    }
    out.k_monotone = out.max_k_increase <= 0.0;
    return out;
}

EquivalenceReport equivalence_check(const GBSDESolution& solution, const GBSDEProblem& problem,
                                    const PathBundle& bundle, EquivalenceOptions options) {
    check_bundle(problem, bundle);
    const auto& surface = solution.y;
    const auto& space = surface.space_grid();
    const auto fields = derivative_fields(surface);
    const double T = problem.horizon;
    const std::size_t rows = fields.n_rows;
    const std::size_t np = fields.n_points;

    EquivalenceReport rep;
    std::vector<double> a(rows * np);
    std::vector<double> taus(rows);
    const double margin = options.interior.x_margin_fraction * (space.x_max() - space.x_min());
    for (std::size_t r = 0; r < rows; ++r) {
        taus[r] = surface.tau(r);
        for (std::size_t i = 0; i < np; ++i) {
            const double uxx = fields.at(fields.d2u_dx2, r, i);
            a[r * np + i] = -fields.at(fields.du_dtau, r, i) + g_value(problem.band, uxx);
            const double x = space.x(i);
            if (i == 0 || i + 1 == np || taus[r] < options.interior.tau_from || x < space.x_min() + margin ||
                x > space.x_max() - margin)
                continue;
            const double res = a[r * np + i] +
                               problem.driver(T - taus[r], surface.at(r, i), fields.at(fields.du_dx, r, i));
            rep.ppde_residual = std::max(rep.ppde_residual, std::abs(res));
        }
    }
    const ValueSurface ag(surface.time_grid(), space, problem.band, taus, std::move(a));

    const auto& tg = bundle.grid;
    const std::size_t n = tg.n_steps();
    const double dt = tg.dt();
    std::vector<double> residual(bundle.n_paths(), 0.0);
    for_paths(bundle.n_paths(), [&](std::size_t p) {
        std::vector<double> curv(n), inc(n);
        std::vector<double> u(n + 1), drift(n), integ(n);
        for (std::size_t j = 0; j <= n; ++j) {
            const double tau = T - tg.time(j);
            const auto loc = surface.local(tau, bundle.b(p, j));
            u[j] = loc.u;
            if (j < n) {
                curv[j] = loc.uxx;
                drift[j] = ag.value(tau, bundle.b(p, j)) * dt;
                const double db = bundle.b(p, j + 1) - bundle.b(p, j);
                const double dq = (bundle.h(p, j) * bundle.h(p, j)) * dt;
                integ[j] = loc.ux * db + 0.5 * loc.uxx * (db * db - dq);
            }
        }
        kernels::k_increments(curv, bundle.h.row(p), inc, dt, problem.band.var_lo(), problem.band.var_hi());
        double acc = 0.0, worst = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += drift[j] + integ[j] + 0.5 * inc[j];
            worst = std::max(worst, std::abs(u[j + 1] - (u[0] + acc)));
        }
        residual[p] = worst;
    });
    for (double r : residual) rep.reconstruction_residual = std::max(rep.reconstruction_residual, r);

    const double dx = space.dx();
    rep.ppde_tolerance = options.ppde_tolerance >= 0.0 ? options.ppde_tolerance
                                                       : grid_budget(surface.time_grid().dt(), dx);
    rep.reconstruction_tolerance =
        options.reconstruction_tolerance >= 0.0 ? options.reconstruction_tolerance : grid_budget(dt, dx);
    rep.ppde_pass = rep.ppde_residual <= rep.ppde_tolerance;
    rep.reconstruction_pass = rep.reconstruction_residual <= rep.reconstruction_tolerance;
    return rep;
}

void write_solution_csv(const GBSDESolution& solution, std::ostream& os) {
    const auto& s = solution.y;
    const auto fields = derivative_fields(s);
    const double T = s.time_grid().horizon();
    CsvWriter csv(os, {"t", "x", "Y", "Z"});
    for (std::size_t r = s.n_rows(); r-- > 0;)
        for (std::size_t i = 0; i < fields.n_points; ++i)
            csv.row(T - s.tau(r), s.space_grid().x(i), s.at(r, i), fields.at(fields.du_dx, r, i));
}

void write_k_traces_csv(const BsdeResidualReport& report, const TimeGrid& grid, std::ostream& os,
                        std::size_t max_paths) {
    CsvWriter csv(os, {"path", "step", "t", "K"});
    const std::size_t n = std::min(max_paths, report.k.n_paths());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k <= grid.n_steps(); ++k) csv.row(p, k, grid.time(k), report.k(p, k));
}

}  // namespace gexpect
