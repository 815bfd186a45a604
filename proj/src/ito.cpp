#include "gexpect/ito.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <ostream>
#include <sstream>

#include "gexpect/csv.hpp"
#include "gexpect/kernels.hpp"
#include "parallel.hpp"

namespace gexpect {

namespace {

constexpr std::size_t kPathChunk = 64;

/// Absolute slack for exactly-zero deterministic increments.
double rounding_floor(double scale) { return 1e-12 * std::max(1.0, std::abs(scale)); }

std::size_t dyadic_block(std::size_t n_steps, int level) {
    require(level >= 0 && level < 63, ErrorKind::Usage, "dyadic level out of range");
    const std::size_t blocks = std::size_t{1} << level;
    if (n_steps % blocks != 0) {
        std::ostringstream os;
        os << "2^" << level << " does not divide the path grid of " << n_steps << " steps";
        fail(ErrorKind::Usage, os.str());
    }
    return n_steps / blocks;
}

template <class Body>
void for_paths(std::size_t n_paths, Body&& body) {
    const std::size_t chunks = (n_paths + kPathChunk - 1) / kPathChunk;
    detail::parallel_for(chunks, 0, [&](std::size_t c) {
        const std::size_t end = std::min(n_paths, (c + 1) * kPathChunk);
        for (std::size_t p = c * kPathChunk; p < end; ++p) body(p);
    });
}

McEstimate increment_estimate(const PathMatrix& x, std::size_t from, std::size_t to) {
    std::vector<double> samples(x.n_paths());
    for (std::size_t p = 0; p < x.n_paths(); ++p) samples[p] = x(p, to) - x(p, from);
    return estimate(samples);
}

}  // namespace

PathMatrix sample_steps(const PathBundle& bundle, const StepRule& rule) {
    const std::size_t n = bundle.grid.n_steps();
    PathMatrix out(bundle.n_paths(), n);
    for_paths(bundle.n_paths(), [&](std::size_t p) {
        for (std::size_t k = 0; k < n; ++k) out(p, k) = rule(bundle.view(p, k));
    });
    return out;
}

PathMatrix stochastic_integral(const PathMatrix& integrand, const PathMatrix& driver) {
    require(driver.n_cols() >= 1, ErrorKind::Usage, "driver path is empty");
    const std::size_t n = driver.n_cols() - 1;
    require(integrand.n_paths() == driver.n_paths() &&
                (integrand.n_cols() == n || integrand.n_cols() == n + 1),
            ErrorKind::Usage, "integrand and driver are not on the same grid");
    PathMatrix out(driver.n_paths(), n + 1);
    for (std::size_t p = 0; p < driver.n_paths(); ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += integrand(p, k) * (driver(p, k + 1) - driver(p, k));
            out(p, k + 1) = acc;
        }
    }
    return out;
}

PathMatrix qn_quadratic_variation(const PathMatrix& b, int level) {
    const std::size_t n = b.n_cols() - 1;
    const std::size_t per = dyadic_block(n, level);
    PathMatrix out(b.n_paths(), n + 1);
    for (std::size_t p = 0; p < b.n_paths(); ++p) {
        double closed = 0.0;
        for (std::size_t k = 1; k <= n; ++k) {
            const std::size_t open = ((k - 1) / per) * per;
            const double d = b(p, k) - b(p, open);
            out(p, k) = closed + d * d;
            if (k % per == 0) closed = out(p, k);
        }
    }
    return out;
}

PathMatrix qn_lambda(const PathMatrix& b, int level) {
    const std::size_t n = b.n_cols() - 1;
    const std::size_t per = dyadic_block(n, level);
    PathMatrix out(b.n_paths(), n);
    for (std::size_t p = 0; p < b.n_paths(); ++p)
        for (std::size_t k = 0; k < n; ++k) out(p, k) = 2.0 * (b(p, k) - b(p, (k / per) * per));
    return out;
}

PathMatrix realized_quadratic_variation(const PathMatrix& b) {
    const std::size_t n = b.n_cols() - 1;
    PathMatrix out(b.n_paths(), n + 1);
    for (std::size_t p = 0; p < b.n_paths(); ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double d = b(p, k + 1) - b(p, k);
            acc += d * d;
            out(p, k + 1) = acc;
        }
    }
    return out;
}

PathMatrix k_process(const PathMatrix& varsigma, const PathBundle& bundle, const GParams& band) {
    const std::size_t n = bundle.grid.n_steps();
    require(varsigma.n_paths() == bundle.n_paths() && varsigma.n_cols() == n, ErrorKind::Usage,
            "varsigma is not on the bundle grid");
    PathMatrix out(bundle.n_paths(), n + 1);
    const double dt = bundle.grid.dt();
    for_paths(bundle.n_paths(), [&](std::size_t p) {
        std::vector<double> inc(n);
        kernels::k_increments(varsigma.row(p), bundle.h.row(p), inc, dt, band.var_lo(), band.var_hi());
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += inc[k];
            out(p, k + 1) = acc;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------

double ItoDecomposition::max_residual() const {
    double worst = 0.0;
    for (double r : residual) worst = std::max(worst, r);
    return worst;
}

ItoDecomposition martingale_decomposition(const CylinderFunctional& xi, const GParams& band, const PdeGrid& grid,
                                          const PathBundle& bundle) {
    CylinderRecursion::Options options;
    options.keep_surfaces = true;
    const CylinderRecursion recursion(xi, band, grid, options);
    const auto& tg = bundle.grid;
    require(std::abs(tg.horizon() - xi.horizon()) <= 1e-12 * std::max(1.0, xi.horizon()), ErrorKind::Usage,
            "bundle horizon differs from the functional's horizon");
    std::vector<std::size_t> cyl_nodes;
    for (double t : xi.times()) cyl_nodes.push_back(tg.node_index(t));

    const std::size_t n = tg.n_steps();
    const std::size_t n_paths = bundle.n_paths();
    const double dt = tg.dt();
    ItoDecomposition out;
    out.initial = recursion.value();
    out.z = PathMatrix(n_paths, n + 1);
    out.k = PathMatrix(n_paths, n + 1);
    out.m = PathMatrix(n_paths, n + 1);
    out.residual.assign(n_paths, 0.0);

    std::vector<std::size_t> level_of(n + 1);
    for (std::size_t j = 0; j <= n; ++j) level_of[j] = recursion.level_at(tg.time(j));

    for_paths(n_paths, [&](std::size_t p) {
        std::vector<double> params;
        std::vector<double> curvature(n);
        std::vector<double> inc(n);
        for (std::size_t j = 0; j <= n; ++j) {
            params.clear();
            for (std::size_t i = 0; i + 1 < level_of[j]; ++i) params.push_back(bundle.b(p, cyl_nodes[i]));
            const auto loc = recursion.local(tg.time(j), params, bundle.b(p, j));
            out.m(p, j) = loc.u;
            out.z(p, j) = loc.ux;
            if (j < n) curvature[j] = loc.uxx;
        }
        kernels::k_increments(curvature, bundle.h.row(p), inc, dt, band.var_lo(), band.var_hi());
        double k_acc = 0.0;
        double integral = 0.0;
        double worst = std::abs(out.m(p, 0) - out.initial);
        for (std::size_t j = 0; j < n; ++j) {
            k_acc += 0.5 * inc[j];
            integral += out.z(p, j) * (bundle.b(p, j + 1) - bundle.b(p, j));
            out.k(p, j + 1) = k_acc;
            worst = std::max(worst, std::abs(out.m(p, j + 1) - (out.initial + integral + k_acc)));
        }
        out.residual[p] = worst;
    });
    return out;
}

// ---------------------------------------------------------------------------

MartingaleReport martingale_test(const ProcessBuilder& process, std::span<const ControlProcess> family,
                                 std::span<const std::pair<double, double>> pairs, const TimeGrid& grid,
                                 std::size_t n_paths, std::uint64_t seed, SimulationOptions options) {
    require(!family.empty(), ErrorKind::Usage, "martingale_test needs a non-empty family");
    require(!pairs.empty(), ErrorKind::Usage, "martingale_test needs at least one time pair");
    std::vector<std::pair<std::size_t, std::size_t>> nodes;
    for (const auto& [s, t] : pairs) {
        require(s <= t, ErrorKind::Usage, "time pairs must satisfy s <= t");
        nodes.emplace_back(grid.node_index(s), grid.node_index(t));
    }
    std::vector<std::vector<McEstimate>> est(pairs.size(), std::vector<McEstimate>(family.size()));
    for (std::size_t i = 0; i < family.size(); ++i) {
        const auto bundle = simulate(family[i], grid, n_paths, mix_seed(seed, 0), options);
        const auto x = process(bundle);
        require(x.n_paths() == n_paths && x.n_cols() == grid.n_steps() + 1, ErrorKind::Usage,
                "process builder returned a matrix off the bundle grid");
        for (std::size_t q = 0; q < pairs.size(); ++q) est[q][i] = increment_estimate(x, nodes[q].first, nodes[q].second);
    }
    MartingaleReport report;
    report.consistent = true;
    for (std::size_t q = 0; q < pairs.size(); ++q) {
        MartingaleRow row;
        row.s = pairs[q].first;
        row.t = pairs[q].second;
        for (std::size_t i = 0; i < family.size(); ++i) {
            if (i == 0 || est[q][i].mean > row.sup.mean) {
                row.sup = est[q][i];
                row.sup_index = i;
            }
            if (i == 0 || est[q][i].mean < row.min.mean) {
                row.min = est[q][i];
                row.min_index = i;
            }
        }
        row.tolerance = 3.0 * row.sup.std_error + rounding_floor(row.t - row.s);
        row.consistent = std::abs(row.sup.mean) <= row.tolerance;
        report.consistent = report.consistent && row.consistent;
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------

std::vector<DriftRow> identify_drift(const std::vector<double>& breakpoints, const std::vector<StepRule>& eta,
                                     const GParams& band, std::span<const ControlProcess> family,
                                     const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                     double tolerance, SimulationOptions options) {
    require(breakpoints.size() == eta.size() + 1, ErrorKind::Usage, "eta needs one rule per interval");
    std::vector<ControlProcess> members(family.begin(), family.end());
    if (members.empty()) {
        members.push_back(ControlProcess::constant(band, band.sigma_lo()));
        members.push_back(ControlProcess::constant(band, band.sigma_hi()));
        members.push_back(ControlProcess::bang_bang(band, breakpoints, eta));
    }
    std::vector<std::size_t> nodes;
    for (double b : breakpoints) nodes.push_back(grid.node_index(b));
    const std::size_t intervals = eta.size();
    const double dt = grid.dt();
    const double eps = 0.5 * band.var_spread();

    std::vector<std::vector<McEstimate>> est(intervals, std::vector<McEstimate>(members.size()));
    std::vector<double> lo(intervals, INFINITY), hi(intervals, -INFINITY);
    for (std::size_t i = 0; i < members.size(); ++i) {
        const auto bundle = simulate(members[i], grid, n_paths, mix_seed(seed, 0), options);
        for (std::size_t q = 0; q < intervals; ++q) {
            std::vector<double> samples(n_paths);
            for (std::size_t p = 0; p < n_paths; ++p) {
                const double e = eta[q](bundle.view(p, nodes[q]));
                double acc = 0.0;
                for (std::size_t k = nodes[q]; k < nodes[q + 1]; ++k) acc += e * ((bundle.h(p, k) * bundle.h(p, k)) * dt);
                samples[p] = acc;
                lo[q] = std::min(lo[q], 2.0 * g_eps_value(band, eps, e));
                hi[q] = std::max(hi[q], 2.0 * g_value(band, e) + eps);
            }
            est[q][i] = estimate(samples);
        }
    }

    std::vector<DriftRow> rows;
    for (std::size_t q = 0; q < intervals; ++q) {
        DriftRow row;
        row.t_from = breakpoints[q];
        row.t_to = breakpoints[q + 1];
        for (std::size_t i = 0; i < members.size(); ++i)
            if (i == 0 || est[q][i].mean > row.sup_integral.mean) {
                row.sup_integral = est[q][i];
                row.best_index = i;
            }
        const double len = row.t_to - row.t_from;
        auto f = [&](double c) { return row.sup_integral.mean - c * len; };
        double a = lo[q], b = hi[q];
        row.bracket_lo = a;
        row.bracket_hi = b;
        if (f(a) < 0.0 || f(b) > 0.0) {
            std::ostringstream os;
            os << "drift bisection on (" << row.t_from << ", " << row.t_to << "] does not bracket: f(" << a
               << ") = " << f(a) << ", f(" << b << ") = " << f(b);
            fail(ErrorKind::Numeric, os.str());
        }
        while (b - a > tolerance * std::max(1.0, std::abs(a)) && row.iterations < 200) {
            const double mid = 0.5 * (a + b);
            (f(mid) >= 0.0 ? a : b) = mid;
            ++row.iterations;
        }
        row.drift = 0.5 * (a + b);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

std::vector<Step2Row> step2_limit_check(const DeterministicStep& zeta, double alpha, std::span<const int> ks) {
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::Domain, "alpha must lie in (0, 1)");
    const auto& br = zeta.breakpoints;
    require(br.size() == zeta.values.size() + 1 && br.size() >= 2 && br.front() == 0.0 && br.back() == 1.0,
            ErrorKind::Usage, "zeta must be a step function on [0, 1]");
    double total = 0.0;
    double scale = 0.0;
    for (std::size_t j = 0; j + 1 < br.size(); ++j) {
        total += zeta.values[j] * (br[j + 1] - br[j]);
        scale += std::abs(zeta.values[j]) * (br[j + 1] - br[j]);
    }
    // int over ]a, b] of zeta
    auto integral = [&](double a, double b) {
        double acc = 0.0;
        for (std::size_t j = 0; j + 1 < br.size(); ++j) {
            const double lo = std::max(a, br[j]);
            const double hi = std::min(b, br[j + 1]);
            if (hi > lo) acc += zeta.values[j] * (hi - lo);
        }
        return acc;
    };
    const double ratio = alpha / (1.0 - alpha);
    std::vector<Step2Row> rows;
    for (int k : ks) {
        require(k >= 1, ErrorKind::Domain, "k must be at least 1");
        Step2Row row;
        row.k = k;
        const double kd = static_cast<double>(k);
        double plus = 0.0;
        double minus = 0.0;
        for (int i = 0; i < k; ++i) {
            const double a = i / kd;
            const double mid = (i + alpha) / kd;
            const double b = (i + 1) / kd;
            plus += integral(a, mid);
            minus += integral(mid, b);
            row.block_identity = std::max(row.block_identity, std::abs((mid - a) - ratio * (b - mid)));
        }
        row.integral_minus = minus;
        row.target = (1.0 - alpha) * total;
        row.gap = std::abs(minus - row.target);
        row.divides = std::all_of(br.begin(), br.end(), [&](double s) {
            return std::abs(s * kd - std::round(s * kd)) <= 1e-9;
        });
        row.exact = row.gap <= 64.0 * DBL_EPSILON * std::max(scale, 1e-300);
        row.d_alpha = std::abs(plus - ratio * minus);
        row.step4_gap = std::abs((1.0 - alpha) * row.d_alpha - row.gap);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

std::vector<StationarityRow> increment_stationarity_test(const ProcessBuilder& process,
                                                         std::span<const ControlProcess> family,
                                                         std::span<const std::pair<double, double>> window_starts,
                                                         double length, const TimeGrid& grid, std::size_t n_paths,
                                                         std::uint64_t seed, SimulationOptions options) {
    require(!family.empty(), ErrorKind::Usage, "stationarity test needs a non-empty family");
    require(length > 0.0, ErrorKind::Usage, "window length must be positive");
    std::vector<StationarityRow> rows;
    for (std::size_t i = 0; i < family.size(); ++i) {
        const auto bundle = simulate(family[i], grid, n_paths, mix_seed(seed, 0), options);
        const auto x = process(bundle);
        for (const auto& [sa, sb] : window_starts) {
            StationarityRow row;
            row.control = i;
            row.window_a = sa;
            row.window_b = sb;
            row.a = increment_estimate(x, grid.node_index(sa), grid.node_index(sa + length));
            row.b = increment_estimate(x, grid.node_index(sb), grid.node_index(sb + length));
            row.diff = row.b.mean - row.a.mean;
            row.tolerance = 3.0 * std::hypot(row.a.std_error, row.b.std_error) +
                            rounding_floor(std::max(std::abs(row.a.mean), std::abs(row.b.mean)));
            row.consistent = std::abs(row.diff) <= row.tolerance;
            rows.push_back(row);
        }
    }
    return rows;
}

void write_martingale_csv(const MartingaleReport& report, const std::string& process, const std::string& family,
                          std::ostream& os) {
    CsvWriter csv(os, {"process", "s", "t", "family", "sup", "sup_stderr", "sup_index", "min", "min_stderr",
                       "min_index", "tolerance", "verdict"});
    for (const auto& r : report.rows)
        csv.row(process, r.s, r.t, family, r.sup.mean, r.sup.std_error, r.sup_index, r.min.mean, r.min.std_error,
                r.min_index, r.tolerance, r.consistent ? "consistent (one-sided)" : "refuted");
}

}  // namespace gexpect
