#include "gexpect/mc.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

#include "gexpect/csv.hpp"
#include "gexpect/kernels.hpp"
#include "parallel.hpp"

namespace gexpect {

PathBundle simulate(const ControlProcess& control, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                    SimulationOptions options) {
    require(n_paths >= 1, ErrorKind::Usage, "simulate needs at least one path");
    control.check_grid(grid);
    const std::size_t steps = grid.n_steps();
    PathBundle bundle{grid, seed, PathMatrix(n_paths, steps + 1), PathMatrix(n_paths, steps + 1),
                      PathMatrix(n_paths, steps)};
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
    const std::size_t n_chunks = (n_paths + chunk - 1) / chunk;

    detail::parallel_for(n_chunks, options.threads, [&](std::size_t c) {
        const std::size_t first = c * chunk;
        const std::size_t count = std::min(chunk, n_paths - first);
        std::vector<std::mt19937_64> engines;
        std::vector<std::normal_distribution<double>> normals(count);
        engines.reserve(count);
        for (std::size_t j = 0; j < count; ++j) engines.emplace_back(mix_seed(seed, first + j));

        std::vector<double> b(count, 0.0), qv(count, 0.0), h(count), z(count);
        for (std::size_t k = 0; k < steps; ++k) {
            for (std::size_t j = 0; j < count; ++j) {
                const std::size_t p = first + j;
                h[j] = control.level(bundle.view(p, k));
                bundle.h(p, k) = h[j];
                z[j] = normals[j](engines[j]);
            }
            kernels::advance_paths(b, qv, h, z, dt, sqrt_dt);
            for (std::size_t j = 0; j < count; ++j) {
                bundle.b(first + j, k + 1) = b[j];
                bundle.qv(first + j, k + 1) = qv[j];
            }
        }
    });
    return bundle;
}

bool satisfies_qv_bounds(const PathBundle& bundle, const GParams& band) {
    const auto& grid = bundle.grid;
    const double dt = grid.dt();
    const double lo_step = band.var_lo() * dt;
    const double hi_step = band.var_hi() * dt;
    const double tol = 1e-12 * band.var_hi() * grid.horizon();
    for (std::size_t p = 0; p < bundle.n_paths(); ++p) {
        const auto qv = bundle.qv.row(p);
        const auto h = bundle.h.row(p);
        if (qv[0] != 0.0 || bundle.b(p, 0) != 0.0) return false;
        double max_lower = -INFINITY;  // max_{s} (qv_s - lo^2 s)
        double max_upper = -INFINITY;  // max_{s} (hi^2 s - qv_s)
        for (std::size_t k = 0; k <= grid.n_steps(); ++k) {
            if (k < grid.n_steps()) {
                const double step_var = (h[k] * h[k]) * dt;
                if (step_var < lo_step || step_var > hi_step) return false;
            }
            const double t = grid.time(k);
            const double lower = qv[k] - band.var_lo() * t;
            const double upper = band.var_hi() * t - qv[k];
            if (lower < max_lower - tol || upper < max_upper - tol) return false;
            max_lower = std::max(max_lower, lower);
            max_upper = std::max(max_upper, upper);
        }
    }
    return true;
}

McEstimate estimate(std::span<const double> samples) {
    McEstimate e;
    e.n_paths = samples.size();
    if (samples.empty()) return e;
    double sum = 0.0;
    for (double s : samples) sum += s;
    e.mean = sum / static_cast<double>(samples.size());
    if (samples.size() < 2) return e;
    double ss = 0.0;
    for (double s : samples) ss += (s - e.mean) * (s - e.mean);
    const double var = ss / static_cast<double>(samples.size() - 1);
    e.std_error = std::sqrt(var / static_cast<double>(samples.size()));
    return e;
}

McEstimate mc_expectation(const CylinderFunctional& xi, const PathBundle& bundle, TimeSnapping snapping) {
    std::vector<std::size_t> nodes;
    for (double t : xi.times()) {
        if (snapping == TimeSnapping::Exact) {
            nodes.push_back(bundle.grid.node_index(t));
        } else {
            require(t <= bundle.grid.horizon() * (1.0 + 1e-12), ErrorKind::Usage,
                    "cylinder time beyond the bundle horizon");
            nodes.push_back(bundle.grid.nearest_index(t));
        }
    }
    std::vector<double> samples(bundle.n_paths());
    std::vector<double> levels(nodes.size());
    for (std::size_t p = 0; p < bundle.n_paths(); ++p) {
        for (std::size_t i = 0; i < nodes.size(); ++i) levels[i] = bundle.b(p, nodes[i]);
        samples[p] = xi.evaluate_levels(levels);
    }
    return estimate(samples);
}

SupResult sup_over_controls(const CylinderFunctional& xi, std::span<const ControlProcess> family,
                            const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                            SimulationOptions options) {
    require(!family.empty(), ErrorKind::Usage, "sup_over_controls needs a non-empty family");
    SupResult out;
    for (std::size_t i = 0; i < family.size(); ++i) {
        const auto bundle = simulate(family[i], grid, n_paths, mix_seed(seed, 0), options);
        out.members.push_back(mc_expectation(xi, bundle));
        if (i == 0 || out.members[i].mean > out.best.mean) {
            out.best = out.members[i];
            out.best_index = i;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(TestStatus status) noexcept {
    switch (status) {
    case TestStatus::Pass: return "pass";
    case TestStatus::Fail: return "fail";
    case TestStatus::OutOfScope: return "out-of-scope";
    }
    return "unknown";
}

double BlockFunctional::operator()(const PathBundle& bundle, std::size_t path) const {
    require(resolution >= 1 && bundle.grid.n_steps() % resolution == 0, ErrorKind::Usage,
            "block functional resolution does not divide the simulation grid");
    const std::size_t per = bundle.grid.n_steps() / resolution;
    std::vector<double> incr(resolution);
    for (std::size_t j = 0; j < resolution; ++j) incr[j] = bundle.b(path, (j + 1) * per) - bundle.b(path, j * per);
    return psi(incr);
}

namespace {

std::vector<double> block_samples(const BlockFunctional& psi, const PathBundle& bundle) {
    std::vector<double> samples(bundle.n_paths());
    for (std::size_t p = 0; p < bundle.n_paths(); ++p) samples[p] = psi(bundle, p);
    return samples;
}

/// Paired comparison on common random numbers: the stderr is that of the
/// per-path differences.
MarginalMatchReport compare(std::span<const double> base, std::span<const double> pert) {
    std::vector<double> diff(base.size());
    for (std::size_t p = 0; p < base.size(); ++p) diff[p] = pert[p] - base[p];
    const auto d = estimate(diff);
    MarginalMatchReport r;
    r.base = estimate(base);
    r.perturbed = estimate(pert);
    r.diff = d.mean;
    r.combined_stderr = d.std_error;
    r.status = std::abs(r.diff) <= 3.0 * r.combined_stderr ? TestStatus::Pass : TestStatus::Fail;
    return r;
}

}  // namespace

MarginalMatchReport marginal_match_test(const ControlProcess& h, const ControlProcess& h_tilde,
                                        const BlockFunctional& psi, const TimeGrid& grid, std::size_t n_paths,
                                        std::uint64_t seed, SimulationOptions options) {
    require(h.kind() == ControlProcess::Kind::SelfDependent, ErrorKind::Usage,
            "marginal_match_test needs a self-dependent base control");
    const std::size_t m = h.blocks();
    if (h_tilde.kind() == ControlProcess::Kind::SelfDependent ||
        h_tilde.kind() == ControlProcess::Kind::Perturbed) {
        require(h_tilde.blocks() == m, ErrorKind::Usage, "controls have different numbers of blocks");
    }
    const auto base = simulate(h, grid, n_paths, mix_seed(seed, 1), options);
    const auto pert = simulate(h_tilde, grid, n_paths, mix_seed(seed, 1), options);
    if (psi.resolution == 0 || m % psi.resolution != 0 || grid.n_steps() % psi.resolution != 0) {
        MarginalMatchReport r;
        r.status = TestStatus::OutOfScope;
        return r;
    }
    return compare(block_samples(psi, base), block_samples(psi, pert));
}

std::vector<WeakConvergenceRow> weak_convergence_probe(const ControlProcess& h, double alpha,
                                                       std::shared_ptr<const ControlProcess> sub_control,
                                                       int max_refinement, const BlockFunctional& psi,
                                                       const TimeGrid& grid, std::size_t n_paths,
                                                       std::uint64_t seed, SimulationOptions options) {
    require(max_refinement >= 0, ErrorKind::Usage, "max_refinement must be non-negative");
    const std::size_t m = h.blocks();
    bool representable = false;
    for (int k = 0; k <= max_refinement; ++k) representable |= ((m << k) % psi.resolution == 0);
    require(representable, ErrorKind::Usage, "psi is not a function of B^{2^k m} for any k <= max_refinement");

    const auto base = simulate(h, grid, n_paths, mix_seed(seed, 1), options);
    const auto base_samples = block_samples(psi, base);
    std::vector<WeakConvergenceRow> rows;
    for (int n = 0; n <= max_refinement; ++n) {
        const auto hn = perturb_control(h, PerturbationSchedule(n, alpha, sub_control));
        const auto bundle = simulate(hn, grid, n_paths, mix_seed(seed, 1), options);
        WeakConvergenceRow row;
        row.refinement = n;
        row.report = compare(base_samples, block_samples(psi, bundle));
        row.law_matches = (m << n) % psi.resolution == 0;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

ControlProcess perturb_control(const ControlProcess& base, const PerturbationSchedule& schedule) {
    require(base.kind() == ControlProcess::Kind::SelfDependent, ErrorKind::Usage,
            "perturb_control needs a self-dependent base control");
    const GParams& band = base.band();
    const double eps = schedule.epsilon(band);
    const double lo = band.var_lo() + eps;
    const double hi = band.var_hi() - eps;
    require(lo <= hi + 1e-12 * band.var_hi(), ErrorKind::Domain,
            "alpha too large: the eps-shrunk band is empty");

    // Spot-check the base levels on sampled block increments.
    const std::size_t m = base.blocks();
    const TimeGrid grid(base.horizon(), m);
    std::mt19937_64 rng(mix_seed(0x9e7u, m));
    std::normal_distribution<double> z(0.0, band.sigma_hi() * std::sqrt(base.horizon() / static_cast<double>(m)));
    std::vector<double> b(m + 1), qv(m + 1, 0.0), h(m, band.sigma_hi());
    for (int sample = 0; sample < 32; ++sample) {
        b[0] = 0.0;
        for (std::size_t i = 1; i <= m; ++i) b[i] = b[i - 1] + (sample == 0 ? 0.0 : z(rng));
        for (std::size_t i = 0; i < m; ++i) {
            const PathView view{&grid, i, std::span<const double>(b).first(i + 1),
                                std::span<const double>(qv).first(i + 1), std::span<const double>(h).first(i)};
            const double xi = base.block_level(i, view);
            const double xi2 = xi * xi;
            if (xi2 < lo - 1e-12 * band.var_hi() || xi2 > hi + 1e-12 * band.var_hi()) {
                std::ostringstream os;
                os << "perturbation precondition violated on block " << i << ": |xi|^2 = " << xi2 << " outside ["
                   << lo << ", " << hi << "]";
                fail(ErrorKind::Domain, os.str());
            }
        }
    }
    require(schedule.sub_control().band().sigma_lo() >= band.sigma_lo() &&
                schedule.sub_control().band().sigma_hi() <= band.sigma_hi(),
            ErrorKind::Domain, "sub-control band exceeds the base band");
    return ControlProcess::perturbed(base, schedule);
}

double perturbation_identity_error(const ControlProcess& perturbed, const PathBundle& bundle) {
    const auto* sch = perturbed.schedule();
    require(sch != nullptr, ErrorKind::Usage, "perturbation_identity_error needs a perturbed control");
    const std::size_t m = perturbed.blocks();
    const std::size_t subs = m << sch->refinement();
    const std::size_t steps = bundle.grid.n_steps();
    require(steps % subs == 0, ErrorKind::Usage, "bundle grid does not resolve the sub-blocks");
    const std::size_t per_sub = steps / subs;
    const std::size_t per_block = steps / m;
    const double length = bundle.grid.horizon() / static_cast<double>(subs);
    const double dt = bundle.grid.dt();
    double worst = 0.0;
    for (std::size_t p = 0; p < bundle.n_paths(); ++p) {
        const auto h = bundle.h.row(p);
        for (std::size_t j = 0; j < subs; ++j) {
            double integral = 0.0;
            for (std::size_t k = j * per_sub; k < (j + 1) * per_sub; ++k) integral += (h[k] * h[k]) * dt;
            const std::size_t start = j * per_sub;
            const double xi = perturbed.block_level(start / per_block, bundle.view(p, start));
            worst = std::max(worst, std::abs(integral - length * xi * xi));
        }
    }
    return worst;
}

void write_bundle_csv(const PathBundle& bundle, std::ostream& os, std::size_t max_paths) {
    CsvWriter csv(os, {"path", "step", "t", "B", "qv", "h"});
    const std::size_t n = std::min(max_paths, bundle.n_paths());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k <= bundle.grid.n_steps(); ++k) {
            if (k < bundle.grid.n_steps())
                csv.row(p, k, bundle.grid.time(k), bundle.b(p, k), bundle.qv(p, k), bundle.h(p, k));
            else
                csv.row(p, k, bundle.grid.time(k), bundle.b(p, k), bundle.qv(p, k), "");
        }
}

}  // namespace gexpect
