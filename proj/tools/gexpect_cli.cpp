#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gexpect/suite.hpp"

int main(int argc, char** argv) {
    CLI::App app{"G-expectation numerics: run experiment suites described by a JSON config"};
    app.require_subcommand(1);

    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "Run the experiments of a config; writes one CSV each plus summary.csv");
    run->add_option("config", config, "Suite configuration (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (default: $GEXPECT_OUT_DIR, else the current directory)");
    run->add_option("--seed", seed, "Replace mc.seed for every experiment");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    gexpect::SuiteOptions options;
    if (!out_dir.empty()) options.out_dir = out_dir;
    else if (const char* env = std::getenv("GEXPECT_OUT_DIR"); env && *env) options.out_dir = env;
    options.seed = seed;
    options.log = &std::cerr;
    return gexpect::run_suite_file(config, options).exit_code;
}
