#pragma once

// Volatility-controlled simulation of B under P_h = P o (int h dW)^{-1} and
// the Monte-Carlo side of the representation E[xi] = sup_h E_{P_h}[xi].

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gexpect/control.hpp"
#include "gexpect/core.hpp"

namespace gexpect {

/// Dense per-path table, path-major: row p holds one path's values on all columns.
class PathMatrix {
public:
    PathMatrix() = default;
    PathMatrix(std::size_t n_paths, std::size_t n_cols, double fill = 0.0)
        : n_paths_(n_paths), n_cols_(n_cols), data_(n_paths * n_cols, fill) {}

    std::size_t n_paths() const noexcept { return n_paths_; }
    std::size_t n_cols() const noexcept { return n_cols_; }
    std::span<double> row(std::size_t p) noexcept { return {data_.data() + p * n_cols_, n_cols_}; }
    std::span<const double> row(std::size_t p) const noexcept { return {data_.data() + p * n_cols_, n_cols_}; }
    double& operator()(std::size_t p, std::size_t k) noexcept { return data_[p * n_cols_ + k]; }
    double operator()(std::size_t p, std::size_t k) const noexcept { return data_[p * n_cols_ + k]; }
    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const PathMatrix&, const PathMatrix&) = default;

private:
    std::size_t n_paths_ = 0;
    std::size_t n_cols_ = 0;
    std::vector<double> data_;
};

/// Simulated controlled paths: B and <B> on nodes 0..n_steps, h on steps 0..n_steps-1.
struct PathBundle {
    TimeGrid grid;
    std::uint64_t seed = 0;
    PathMatrix b;
    PathMatrix qv;
    PathMatrix h;

    std::size_t n_paths() const noexcept { return b.n_paths(); }
    PathView view(std::size_t path, std::size_t step) const noexcept {
        return {&grid, step, b.row(path).first(step + 1), qv.row(path).first(step + 1), h.row(path).first(step)};
    }

    friend bool operator==(const PathBundle&, const PathBundle&) = default;
};

struct SimulationOptions {
    /// Worker threads (0 = hardware concurrency). Results do not depend on it.
    unsigned threads = 0;
    /// Paths advanced together through one step (vectorised across paths).
    std::size_t chunk = 256;
};

/// Euler scheme B_{k+1} = B_k + h_k sqrt(dt) z_k with <B>_{k+1} = <B>_k + h_k^2 dt.
/// Path p draws its normals from its own stream seeded by (seed, p), so a bundle
/// depends only on (control, grid, n_paths, seed).
PathBundle simulate(const ControlProcess& control, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                    SimulationOptions options = {});

/// Pathwise check of sigma_lo^2 (t-s) <= <B>_t - <B>_s <= sigma_hi^2 (t-s): per step
/// exactly, and over all grid pairs up to floating rounding of the running sums.
bool satisfies_qv_bounds(const PathBundle& bundle, const GParams& band);

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

/// Sample mean and sample-std / sqrt(n).
McEstimate estimate(std::span<const double> samples);

enum class TimeSnapping { Exact, Nearest };

/// E_{P_h}[xi] over the bundle's paths.
McEstimate mc_expectation(const CylinderFunctional& xi, const PathBundle& bundle,
                          TimeSnapping snapping = TimeSnapping::Exact);

struct SupResult {
    std::size_t best_index = 0;
    McEstimate best;
    std::vector<McEstimate> members;
};

/// Largest mc_expectation over a finite family; member i is simulated with
/// seed mix_seed(seed, 0), i.e. all members share common random numbers.
SupResult sup_over_controls(const CylinderFunctional& xi, std::span<const ControlProcess> family,
                            const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                            SimulationOptions options = {});

/// psi(B^r): a function of the increments of B over r equal blocks of [0, T], oldest first.
struct BlockFunctional {
    std::size_t resolution;
    std::function<double(std::span<const double>)> psi;

    double operator()(const PathBundle& bundle, std::size_t path) const;
};

enum class TestStatus { Pass, Fail, OutOfScope };
std::string_view to_string(TestStatus status) noexcept;

struct MarginalMatchReport {
    McEstimate base;
    McEstimate perturbed;
    double diff = 0.0;
    double combined_stderr = 0.0;
    TestStatus status = TestStatus::OutOfScope;
};

/// Compares E_{P_h}[psi(B^m)] and E_{P_h~}[psi(B^m)] on common random numbers;
/// combined_stderr is the stderr of the per-path differences and the test
/// passes iff |diff| <= 3 combined_stderr. A psi whose resolution does not
/// divide m is not a function of B^m and is reported OutOfScope.
MarginalMatchReport marginal_match_test(const ControlProcess& h, const ControlProcess& h_tilde,
                                        const BlockFunctional& psi, const TimeGrid& grid, std::size_t n_paths,
                                        std::uint64_t seed, SimulationOptions options = {});

struct WeakConvergenceRow {
    int refinement = 0;
    MarginalMatchReport report;
    bool law_matches = false;  // refinement large enough for psi to be a function of B^{2^n m}
};

/// Rows n = 0..max_refinement comparing h with its 2^n m-perturbation built from
/// (alpha, sub_control). psi must be a function of B^{2^k m} for some k <= max_refinement.
std::vector<WeakConvergenceRow> weak_convergence_probe(const ControlProcess& h, double alpha,
                                                       std::shared_ptr<const ControlProcess> sub_control,
                                                       int max_refinement, const BlockFunctional& psi,
                                                       const TimeGrid& grid, std::size_t n_paths,
                                                       std::uint64_t seed, SimulationOptions options = {});

/// Maximum over sub-blocks and paths of |int_{sub-block} h^2 ds - L |xi_i|^2| for a
/// perturbed control simulated in `bundle`.
double perturbation_identity_error(const ControlProcess& perturbed, const PathBundle& bundle);

/// CSV with header `path,step,t,B,qv,h` (h empty on the last node).
void write_bundle_csv(const PathBundle& bundle, std::ostream& os, std::size_t max_paths = SIZE_MAX);

}  // namespace gexpect
