#include "glotdr/app/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace glotdr::app;

namespace {

void add_run_options(CLI::App* cmd, CommandOptions& opts)
{
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
    cmd->add_option("--set", opts.overrides, "override, key=value (repeatable)");
    cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seed", opts.seed, "run seed");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"GLOT-DR desk-scale experiments"};
    app.require_subcommand(1);
    CommandOptions opts;
    opts.threads = threads_from_env();

    auto* train = app.add_subcommand("train", "train one configuration");
    add_run_options(train, opts);
    auto* sweep = app.add_subcommand("sweep", "train the Cartesian product of grid values");
    add_run_options(sweep, opts);
    sweep->add_option("--grid", opts.grid, "axis, key=v1,v2,... (repeatable)")->required();
    auto* attack = app.add_subcommand("attack-eval", "train, then evaluate under PGD at each eval.epsilons radius");
    add_run_options(attack, opts);
    auto* selftest = app.add_subcommand("selftest", "run the oracle and gradient checks");
    selftest->add_flag("--force-fail", opts.force_fail, "append a failing check");
    app.add_subcommand("keys", "list config keys with their defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (train->parsed())
        return cmd_train(opts, std::cout, std::cerr);
    if (sweep->parsed())
        return cmd_sweep(opts, std::cout, std::cerr);
    if (attack->parsed())
        return cmd_attack_eval(opts, std::cout, std::cerr);
    if (selftest->parsed())
        return cmd_selftest(opts, std::cout, std::cerr);
    std::cout << serialize_config(ExperimentConfig{});
    return kExitOk;
}
