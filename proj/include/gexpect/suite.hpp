#pragma once

// Batch runner: a JSON document names experiments, each writes one CSV table
// and contributes rows to summary.csv.
//
// {
//   "band":  {"sigma_lo": 1, "sigma_hi": 2},
//   "grids": {"T": 1, "n_steps": 128, "x_min": -6, "x_max": 6, "n_points": 401, "cfl_fraction": 0.9},
//   "mc":    {"n_paths": 10000, "seed": 20240601},
//   "experiments": ["gexp", {"name": "price-uvm", "overrides": {"payoff": {"type": "call", "strike": 0.5}}}]
// }
//
// Every field has a default. Overrides may patch band, grids and mc for one
// experiment and set that experiment's own parameters. At cfl_fraction = 1 the
// explicit scheme leaves the grid-scale mode undamped, which shows up in the
// derivative fields of kinked payoffs; the default stays just below.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace gexpect {

struct SummaryRow {
    std::string experiment;
    std::string check;
    double value = 0.0;
    std::optional<double> reference;
    std::optional<double> tolerance;
    std::uint64_t seed = 0;
    std::string status;  // pass, fail or info
};

struct SuiteOptions {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;  // replaces mc.seed everywhere
    std::ostream* log = nullptr;
};

struct SuiteReport {
    int exit_code = 0;  // 0 all pass, 1 a check failed, 2 configuration error
    std::string error;  // location and message when exit_code == 2
    std::vector<SummaryRow> rows;
};

inline constexpr std::string_view kExperimentNames[] = {
    "solve-gheat",        "gexp",          "decompose", "verify-martingale", "verify-lemma32",
    "verify-theorem35",   "identify-drift", "gbsde",    "price-uvm"};

SuiteReport run_suite(std::string_view config_json, const SuiteOptions& options);
SuiteReport run_suite_file(const std::filesystem::path& config, const SuiteOptions& options);

}  // namespace gexpect
