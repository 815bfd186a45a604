#pragma once

// Pathwise G-Ito calculus on simulated bundles.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gexpect/control.hpp"
#include "gexpect/core.hpp"
#include "gexpect/gexp.hpp"
#include "gexpect/mc.hpp"

namespace gexpect {

/// Per-step values of an adapted rule along every path: out(p, k) = rule(view(p, k)).
PathMatrix sample_steps(const PathBundle& bundle, const StepRule& rule);

/// Running left-point sums I_k = sum_{j<k} integrand(p, j) (driver(p, j+1) - driver(p, j)).
/// The integrand has one column per step (or per node; the last node is ignored).
PathMatrix stochastic_integral(const PathMatrix& integrand, const PathMatrix& driver);

/// Q^n_t = sum_k (B_{t_{k+1} ^ t} - B_{t_k ^ t})^2 over the dyadic partition
/// t_k = kT/2^n, evaluated on every node. Usage error unless 2^n divides n_steps.
PathMatrix qn_quadratic_variation(const PathMatrix& b, int level);

/// lambda^n on each step: 2 (B_{t_j} - B_{t_k}) with t_k the dyadic node opening
/// the block that contains the step.
PathMatrix qn_lambda(const PathMatrix& b, int level);

/// Realised quadratic variation on the simulation grid, sum_j (B_{j+1} - B_j)^2.
/// It is Q^n at the finest dyadic level and the <B> of the discrete identity
/// Q^n = int lambda^n dB + <B>.
PathMatrix realized_quadratic_variation(const PathMatrix& b);

/// K(varsigma)_t = int varsigma d<B> - int 2G(varsigma) ds with d<B> = h^2 dt;
/// varsigma has one column per step.
PathMatrix k_process(const PathMatrix& varsigma, const PathBundle& bundle, const GParams& band);

struct ItoDecomposition {
    double initial = 0.0;        // E[xi]
    PathMatrix z;                // d_x u along paths, per node
    PathMatrix k;                // 1/2 int d_xx u d<B> - int G(d_xx u) ds
    PathMatrix m;                // E_t[xi] along paths
    std::vector<double> residual;  // per path max_t |m - (initial + int z dB + k)|

    double max_residual() const;
};

/// Martingale decomposition of xi along the bundle's paths. Cylinder times must be
/// nodes of the bundle grid.
ItoDecomposition martingale_decomposition(const CylinderFunctional& xi, const GParams& band, const PdeGrid& grid,
                                          const PathBundle& bundle);

/// X on every node of a bundle.
using ProcessBuilder = std::function<PathMatrix(const PathBundle&)>;

struct MartingaleRow {
    double s = 0.0;
    double t = 0.0;
    McEstimate sup;
    std::size_t sup_index = 0;
    McEstimate min;
    std::size_t min_index = 0;
    double tolerance = 0.0;  // 3 stderr of the maximising member
    bool consistent = false;
};

/// sup and min over a finite family of E_{P_h}[X_t - X_s]. The verdict is one-sided:
/// a finite family can refute the G-martingale property, never prove it.
struct MartingaleReport {
    std::vector<MartingaleRow> rows;
    bool consistent = false;
};

/// Members share common random numbers (seed mix_seed(seed, 0)). A pair passes when
/// the sup lies in [-3 stderr, 3 stderr]; a tiny absolute floor absorbs rounding of
/// exactly-zero deterministic increments.
MartingaleReport martingale_test(const ProcessBuilder& process, std::span<const ControlProcess> family,
                                 std::span<const std::pair<double, double>> pairs, const TimeGrid& grid,
                                 std::size_t n_paths, std::uint64_t seed, SimulationOptions options = {});

struct DriftRow {
    double t_from = 0.0;
    double t_to = 0.0;
    double drift = 0.0;
    McEstimate sup_integral;   // sup over family of E[int eta d<B>] over the interval
    std::size_t best_index = 0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    int iterations = 0;
};

/// Per interval of a step eta, the constant c with sup_h E[int eta d<B> - c ds] = 0, found
/// by bisection on [2G_eps(eta), 2G(eta) + (sigma_hi^2 - sigma_lo^2)/2], eps = (sigma_hi^2 - sigma_lo^2)/2.
/// An empty family means {sigma_lo, sigma_hi, sign_vol(eta)}. Numeric error if the bracket fails.
std::vector<DriftRow> identify_drift(const std::vector<double>& breakpoints, const std::vector<StepRule>& eta,
                                     const GParams& band, std::span<const ControlProcess> family,
                                     const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                     double tolerance = 1e-12, SimulationOptions options = {});

/// Deterministic step function on [0, 1]: values[j] on ]breakpoints[j], breakpoints[j+1]].
struct DeterministicStep {
    std::vector<double> breakpoints;
    std::vector<double> values;
};

struct Step2Row {
    int k = 0;
    double integral_minus = 0.0;  // int delta^-_{k,alpha} zeta ds
    double target = 0.0;          // (1 - alpha) int zeta ds
    double gap = 0.0;             // D_alpha on this k
    bool divides = false;         // 1/k divides zeta's partition
    bool exact = false;           // gap is zero up to rounding
    double block_identity = 0.0;  // max over blocks |int (delta^+ - alpha/(1-alpha) delta^-) ds|
    double d_alpha = 0.0;         // |int (delta^+ - alpha/(1-alpha) delta^-) zeta ds|
    double step4_gap = 0.0;       // |(1 - alpha) d_alpha - D_alpha|
};

/// Exact piecewise quadrature of the oscillator integrals for every k.
std::vector<Step2Row> step2_limit_check(const DeterministicStep& zeta, double alpha, std::span<const int> ks);

struct StationarityRow {
    std::size_t control = 0;
    double window_a = 0.0;  // start of the first window
    double window_b = 0.0;  // start of the second window
    McEstimate a;
    McEstimate b;
    double diff = 0.0;
    double tolerance = 0.0;
    bool consistent = false;
};

/// Stationarity of increments per control: for each member and each pair of window
/// starts, compares E[X_{s+u} - X_s] across the two windows of length u.
std::vector<StationarityRow> increment_stationarity_test(const ProcessBuilder& process,
                                                         std::span<const ControlProcess> family,
                                                         std::span<const std::pair<double, double>> window_starts,
                                                         double length, const TimeGrid& grid, std::size_t n_paths,
                                                         std::uint64_t seed, SimulationOptions options = {});

/// CSV with header `process,s,t,family,sup,sup_stderr,sup_index,min,min_stderr,min_index,tolerance,verdict`.
void write_martingale_csv(const MartingaleReport& report, const std::string& process, const std::string& family,
                          std::ostream& os);

}  // namespace gexpect
