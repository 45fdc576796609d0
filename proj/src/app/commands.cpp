#include "glotdr/app/commands.hpp"

#include "glotdr/app/checks.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <sstream>
#include <thread>

namespace glotdr::app {

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn)
{
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NonFiniteError& e) {
        err << "non-finite value: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

std::string run_id(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "run%03zu", index);
    return buf;
}

std::string join(const std::filesystem::path& dir, const std::string& name)
{
    return (dir / name).string();
}

void write_curves(const std::filesystem::path& dir, const RunOutput& r)
{
    write_text(join(dir, "curves_" + r.run_id + ".svg"),
               curves_svg(r.trace, {"source_acc", "test_acc", "robust_acc"},
                          r.run_id + " " + train::to_string(r.preset) + " accuracy"));
    write_text(join(dir, "losses_" + r.run_id + ".svg"),
               curves_svg(r.trace, {"loss_total", "loss_ce", "loss_local", "loss_global"},
                          r.run_id + " " + train::to_string(r.preset) + " loss"));
}

void print_final(std::ostream& out, const RunOutput& r)
{
    out << r.run_id << " " << train::to_string(r.preset) << " seed " << r.seed;
    for (const char* m : {"loss_total", "source_acc", "test_acc", "robust_acc"}) {
        const auto s = r.trace.series(m);
        if (!s.empty())
            out << "  " << m << " " << format_value(s.back());
    }
    out << "\n";
}

std::filesystem::path prepare_out(const CommandOptions& opts)
{
    std::filesystem::path dir(opts.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

int threads_from_env()
{
    const char* v = std::getenv("GLOT_THREADS");
    if (!v)
        return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1)
        return 1;
    return static_cast<int>(std::min<long>(n, 256));
}

ExperimentConfig resolve_config(const CommandOptions& opts)
{
    ExperimentConfig cfg = opts.config_path ? load_config(*opts.config_path) : ExperimentConfig{};
    for (const auto& o : opts.overrides)
        apply_override(cfg, o);
    if (opts.seed)
        cfg.train.seed = *opts.seed;
    validate(cfg);
    return cfg;
}

GridAxis parse_grid_axis(const std::string& text)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw train::ConfigError("grid axis '" + text + "' is not key=v1,v2,...");
    GridAxis axis{text.substr(0, eq), {}};
    std::stringstream in(text.substr(eq + 1));
    for (std::string v; std::getline(in, v, ',');)
        if (!v.empty())
            axis.values.push_back(v);
    if (axis.values.empty())
        throw train::ConfigError("grid axis '" + axis.key + "' has no values");
    get_value(ExperimentConfig{}, axis.key); // rejects unknown keys
    return axis;
}

std::vector<RunSpec> expand_grid(const ExperimentConfig& base, const std::vector<GridAxis>& grid)
{
    std::vector<RunSpec> specs{RunSpec{"", "", base}};
    for (const auto& axis : grid) {
        std::vector<RunSpec> next;
        for (const auto& s : specs)
            for (const auto& v : axis.values) {
                RunSpec r = s;
                set_value(r.config, axis.key, v);
                r.assignment += (r.assignment.empty() ? "" : ";") + axis.key + "=" + v;
                next.push_back(std::move(r));
            }
        specs = std::move(next);
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        validate(specs[i].config);
        specs[i].run_id = run_id(i);
    }
    return specs;
}

RunOutput execute(const RunSpec& spec)
{
    const auto cfg = effective_train_config(spec.config);
    auto result = train::run(cfg, build_task(spec.config));
    return RunOutput{spec.run_id, cfg.seed, cfg.scenario, cfg.preset, std::move(result.trace)};
}

std::vector<RunOutput> execute_all(const std::vector<RunSpec>& specs, int threads)
{
    std::vector<RunOutput> results(specs.size());
    std::vector<std::exception_ptr> errors(specs.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next++) < specs.size();) {
            try {
                results[i] = execute(specs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(specs.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return results;
}

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto cfg = resolve_config(opts);
        const auto run = execute(RunSpec{run_id(0), "", cfg});
        const auto dir = prepare_out(opts);
        write_text(join(dir, "config.txt"), serialize_config(cfg));
        write_text(join(dir, "metrics.csv"), metrics_csv({run}));
        write_text(join(dir, "summary.csv"), summary_csv({run}));
        if (cfg.svg)
            write_curves(dir, run);
        print_final(out, run);
        return int(kExitOk);
    });
}

int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        if (opts.grid.empty())
            throw train::ConfigError("sweep needs at least one --grid axis");
        const auto cfg = resolve_config(opts);
        std::vector<GridAxis> grid;
        for (const auto& g : opts.grid)
            grid.push_back(parse_grid_axis(g));
        const auto specs = expand_grid(cfg, grid);
        out << specs.size() << " runs on " << std::min<std::size_t>(opts.threads, specs.size()) << " threads\n";
        const auto runs = execute_all(specs, opts.threads);
        const auto dir = prepare_out(opts);
        std::string index = "run_id,seed,scenario,preset,assignment\n";
        for (std::size_t i = 0; i < runs.size(); ++i) {
            index += runs[i].run_id + "," + std::to_string(runs[i].seed) + "," + train::to_string(runs[i].scenario) +
                     "," + train::to_string(runs[i].preset) + "," + specs[i].assignment + "\n";
            if (specs[i].config.svg)
                write_curves(dir, runs[i]);
            print_final(out, runs[i]);
        }
        write_text(join(dir, "config.txt"), serialize_config(cfg));
        write_text(join(dir, "runs.csv"), index);
        write_text(join(dir, "metrics.csv"), metrics_csv(runs));
        write_text(join(dir, "summary.csv"), summary_csv(runs));
        return int(kExitOk);
    });
}

int cmd_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        auto results = selftest_suite();
        if (opts.force_fail)
            results.push_back(CheckResult{"forced failure", false, "requested by --force-fail", 0.0});
        out << format_table(results);
        const bool ok = std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
        out << (ok ? "all checks passed\n" : "some checks failed\n");
        return int(ok ? kExitOk : kExitFailure);
    });
}

int cmd_attack_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto cfg = resolve_config(opts);
        const auto tcfg = effective_train_config(cfg);
        const auto task = build_task(cfg);
        auto result = train::run(tcfg, task);
        RunOutput run{run_id(0), tcfg.seed, tcfg.scenario, tcfg.preset, std::move(result.trace)};

        RunOutput attack{run.run_id, run.seed, run.scenario, run.preset, {}};
        const int epoch = tcfg.epochs;
        attack.trace.add(epoch, "natural_acc", train::evaluate(result.net, task.test));
        const double ratio = cfg.eval.pgd.epsilon > 0.0 ? cfg.eval.pgd.step / cfg.eval.pgd.epsilon : 0.0;
        for (double eps : cfg.eval.epsilons) {
            train::AttackConfig atk = cfg.eval.pgd;
            atk.epsilon = eps;
            atk.step = cfg.eval.pgd.epsilon > 0.0 ? ratio * eps : cfg.eval.pgd.step;
            const double acc = train::evaluate_robust(result.net, task.test, atk);
            attack.trace.add(epoch, "robust_acc_eps" + format_value(eps), acc);
            out << "eps " << format_value(eps) << "  robust_acc " << format_value(acc) << "\n";
        }
        const auto dir = prepare_out(opts);
        write_text(join(dir, "config.txt"), serialize_config(cfg));
        write_text(join(dir, "metrics.csv"), metrics_csv({run}));
        write_text(join(dir, "attack.csv"), metrics_csv({attack}));
        if (cfg.svg)
            write_curves(dir, run);
        return int(kExitOk);
    });
}

} // namespace glotdr::app
