#ifndef GLOTDR_APP_COMMANDS_HPP
#define GLOTDR_APP_COMMANDS_HPP

#include "glotdr/app/config.hpp"
#include "glotdr/app/report.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace glotdr::app {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitNonFinite = 3,
};

struct CommandOptions {
    std::optional<std::string> config_path; // defaults when unset
    std::vector<std::string> overrides;     // key=value, applied in order
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> grid; // key=v1,v2,...
    int threads = 1;
    bool force_fail = false;
};

/// GLOT_THREADS, at least 1; 1 when unset or malformed.
int threads_from_env();

/// Config file, then overrides, then --seed.
ExperimentConfig resolve_config(const CommandOptions& opts);

struct GridAxis {
    std::string key;
    std::vector<std::string> values;
};

GridAxis parse_grid_axis(const std::string& text);

struct RunSpec {
    std::string run_id;
    std::string assignment; // grid values of this run, `key=value;...`
    ExperimentConfig config;
};

/// Cartesian product, first axis outermost. Run ids are run000, run001, ...
std::vector<RunSpec> expand_grid(const ExperimentConfig& base, const std::vector<GridAxis>& grid);

RunOutput execute(const RunSpec& spec);
/// Runs on up to `threads` workers; results come back in spec order.
std::vector<RunOutput> execute_all(const std::vector<RunSpec>& specs, int threads);

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_attack_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);

} // namespace glotdr::app

#endif // GLOTDR_APP_COMMANDS_HPP
