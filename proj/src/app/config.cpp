#include "glotdr/app/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>

namespace glotdr::app {

using train::ConfigError;

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_words(const std::string& s)
{
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;)
        out.push_back(w);
    return out;
}

std::string format_number(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
std::string format_number(T v)
{
    return std::to_string(v);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    T v{};
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (text.empty() || r.ec != std::errc() || r.ptr != end)
        throw ConfigError(key + ": '" + text + "' is not a valid number");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v))
            throw ConfigError(key + ": value must be finite");
    return v;
}

template <typename T>
void check_range(const std::string& key, T v, double lo, double hi)
{
    const double d = static_cast<double>(v);
    if (d < lo || d > hi)
        throw ConfigError(key + ": " + format_number(v) + " outside [" + format_number(lo) + ", " +
                          format_number(hi) + "]");
}

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Access>
Field number(std::string key, Access access, double lo, double hi)
{
    return {key, [access](const ExperimentConfig& c) { return format_number(access(c)); },
            [access, key, lo, hi](ExperimentConfig& c, const std::string& v) {
                auto& slot = access(c);
                const auto parsed = parse_number<std::remove_reference_t<decltype(slot)>>(key, v);
                check_range(key, parsed, lo, hi);
                slot = parsed;
            }};
}

// empty value or `word` means unset
template <typename Access>
Field optional_number(std::string key, Access access, std::string word, double lo, double hi)
{
    return {key,
            [access, word](const ExperimentConfig& c) {
                const auto& slot = access(c);
                return slot ? format_number(*slot) : word;
            },
            [access, key, word, lo, hi](ExperimentConfig& c, const std::string& v) {
                auto& slot = access(c);
                if (v.empty() || v == word) {
                    slot.reset();
                    return;
                }
                const double parsed = parse_number<double>(key, v);
                check_range(key, parsed, lo, hi);
                slot = parsed;
            }};
}

template <typename Access>
Field number_list(std::string key, Access access, double lo, double hi)
{
    return {key,
            [access](const ExperimentConfig& c) {
                std::string out;
                for (const auto& v : access(c))
                    out += (out.empty() ? "" : " ") + format_number(v);
                return out;
            },
            [access, key, lo, hi](ExperimentConfig& c, const std::string& v) {
                auto& slot = access(c);
                std::remove_reference_t<decltype(slot)> parsed;
                for (const auto& w : split_words(v)) {
                    parsed.push_back(parse_number<typename decltype(parsed)::value_type>(key, w));
                    check_range(key, parsed.back(), lo, hi);
                }
                slot = std::move(parsed);
            }};
}

template <typename Access>
Field boolean(std::string key, Access access)
{
    return {key, [access](const ExperimentConfig& c) { return std::string(access(c) ? "true" : "false"); },
            [access, key](ExperimentConfig& c, const std::string& v) {
                if (v == "true")
                    access(c) = true;
                else if (v == "false")
                    access(c) = false;
                else
                    throw ConfigError(key + ": expected true or false, got '" + v + "'");
            }};
}

template <typename E>
using Names = std::vector<std::pair<std::string, E>>;

template <typename E, typename Access>
Field choice(std::string key, Access access, Names<E> names)
{
    return {key,
            [access, names](const ExperimentConfig& c) {
                for (const auto& [n, e] : names)
                    if (e == access(c))
                        return n;
                return std::string("?");
            },
            [access, key, names](ExperimentConfig& c, const std::string& v) {
                std::string options;
                for (const auto& [n, e] : names) {
                    if (n == v) {
                        access(c) = e;
                        return;
                    }
                    options += (options.empty() ? "" : "|") + n;
                }
                throw ConfigError(key + ": '" + v + "' is not one of " + options);
            }};
}

const Names<ScheduleKind> kSchedules{{"constant", ScheduleKind::constant},
                                     {"cosine", ScheduleKind::cosine_annealing},
                                     {"step", ScheduleKind::step_decay},
                                     {"exp_rampup", ScheduleKind::exp_rampup}};

#define FIELD(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& registry()
{
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        f.push_back(choice("scenario", FIELD(c.train.scenario),
                           Names<train::Scenario>{{"da", train::Scenario::da},
                                                  {"ssl", train::Scenario::ssl},
                                                  {"dg", train::Scenario::dg},
                                                  {"aml", train::Scenario::aml}}));
        f.push_back(choice("preset", FIELD(c.train.preset),
                           Names<train::Preset>{{"erm", train::Preset::erm},
                                                {"pgd_at", train::Preset::pgd_at},
                                                {"trades", train::Preset::trades},
                                                {"lot", train::Preset::lot},
                                                {"got", train::Preset::got},
                                                {"glot", train::Preset::glot}}));
        f.push_back(number("seed", FIELD(c.train.seed), 0, 1e18));

        f.push_back(number("train.epochs", FIELD(c.train.epochs), 1, 1e5));
        f.push_back(number("train.batch_source", FIELD(c.train.batch_source), 1, 1e6));
        f.push_back(number("train.batch_target", FIELD(c.train.batch_target), 0, 1e6));
        f.push_back(choice("train.optimizer", FIELD(c.train.optimizer.kind),
                           Names<OptimizerKind>{{"adam", OptimizerKind::adam}, {"sgd", OptimizerKind::sgd_momentum}}));
        f.push_back(number("train.lr", FIELD(c.train.optimizer.lr), 0, 10));
        f.push_back(number("train.momentum", FIELD(c.train.optimizer.momentum), 0, 0.999999));
        f.push_back(number("train.weight_decay", FIELD(c.train.optimizer.weight_decay), 0, 1));
        f.push_back(choice("train.lr_schedule", FIELD(c.train.lr_schedule.kind), kSchedules));
        f.push_back(number_list("train.lr_milestones", FIELD(c.train.lr_schedule.decay_epochs), 0, 1e5));
        f.push_back(number("train.lr_decay", FIELD(c.train.lr_schedule.decay_rate), 0, 1));
        f.push_back(choice("train.weight_schedule", FIELD(c.train.weight_schedule.kind), kSchedules));
        f.push_back(number("train.rampup_length", FIELD(c.train.weight_schedule.rampup_length), 1, 1e5));
        f.push_back(number_list("train.augment_epochs", FIELD(c.train.augment_epochs), 1, 1e5));

        f.push_back(number_list("net.feature_widths", FIELD(c.train.layout.feature_widths), 1, 1e5));
        f.push_back(number_list("net.head_widths", FIELD(c.train.layout.head_widths), 1, 1e5));
        f.push_back(choice("net.activation", FIELD(c.train.layout.activation),
                           Names<Activation>{{"relu", Activation::relu},
                                             {"leaky_relu", Activation::leaky_relu},
                                             {"identity", Activation::identity}}));

        f.push_back(number("risk.alpha", FIELD(c.train.weights.alpha), 0, 1e6));
        f.push_back(number("risk.beta", FIELD(c.train.weights.beta), 0, 1e6));
        f.push_back(number("risk.gamma_pred", FIELD(c.train.weights.gamma_pred), 0, 1e6));

        f.push_back(number("sampler.lambda", FIELD(c.train.sampler.lambda), 1e-12, 1e6));
        f.push_back(number("sampler.n_source", FIELD(c.train.sampler.n_source), 0, 1024));
        f.push_back(number("sampler.n_target", FIELD(c.train.sampler.n_target), 0, 1024));
        f.push_back(number("sampler.radius", FIELD(c.train.sampler.radius), 0, 1e6));
        f.push_back(choice("sampler.norm", FIELD(c.train.sampler.norm),
                           Names<svgd::NormOrder>{{"linf", svgd::NormOrder::linf}, {"l2", svgd::NormOrder::l2}}));
        f.push_back(choice("sampler.space", FIELD(c.train.sampler.space),
                           Names<glot::SampleSpace>{{"input", glot::SampleSpace::input},
                                                    {"latent", glot::SampleSpace::latent}}));
        f.push_back(number("svgd.iterations", FIELD(c.train.sampler.svgd.iterations), 0, 1e6));
        f.push_back(number("svgd.step", FIELD(c.train.sampler.svgd.step), 0, 1e6));
        f.push_back(optional_number("svgd.init_noise", FIELD(c.train.sampler.svgd.init_noise), "auto", 0, 1e6));
        f.push_back(optional_number("svgd.bandwidth", FIELD(c.train.sampler.kernel.bandwidth), "median", 1e-12, 1e6));

        f.push_back(choice("ot.estimator", FIELD(c.train.estimator),
                           Names<glot::Estimator>{{"sinkhorn", glot::Estimator::sinkhorn},
                                                  {"potential", glot::Estimator::potential}}));
        f.push_back(number("ot.epsilon", FIELD(c.train.sinkhorn.epsilon), 1e-9, 1e6));
        f.push_back(number("ot.tol", FIELD(c.train.sinkhorn.tol), 0, 1));
        f.push_back(number("ot.max_iter", FIELD(c.train.sinkhorn.max_iter), 1, 1e8));
        f.push_back(number("ot.potential_hidden", FIELD(c.train.potential_hidden), 1, 1e5));
        f.push_back(number("ot.potential_lr", FIELD(c.train.potential_optimizer.lr), 0, 10));

        f.push_back(number("attack.epsilon", FIELD(c.train.attack.epsilon), 0, 1e6));
        f.push_back(number("attack.steps", FIELD(c.train.attack.steps), 0, 1e6));
        f.push_back(number("attack.step", FIELD(c.train.attack.step), 0, 1e6));
        f.push_back(optional_number("attack.lower", FIELD(c.train.attack.lower), "none", -1e12, 1e12));
        f.push_back(optional_number("attack.upper", FIELD(c.train.attack.upper), "none", -1e12, 1e12));
        f.push_back(number("trades.beta", FIELD(c.train.trades_beta), 0, 1e6));

        f.push_back(boolean("eval.attack", FIELD(c.eval.attack)));
        f.push_back(number("eval.epsilon", FIELD(c.eval.pgd.epsilon), 0, 1e6));
        f.push_back(number("eval.steps", FIELD(c.eval.pgd.steps), 0, 1e6));
        f.push_back(number("eval.step", FIELD(c.eval.pgd.step), 0, 1e6));
        f.push_back(number_list("eval.epsilons", FIELD(c.eval.epsilons), 0, 1e6));

        f.push_back(choice("data.kind", FIELD(c.data.kind),
                           Names<DataKind>{{"auto", DataKind::automatic},
                                           {"moons", DataKind::moons},
                                           {"blobs", DataKind::blobs},
                                           {"aml_blobs", DataKind::aml_blobs}}));
        f.push_back(number("data.seed_offset", FIELD(c.data.seed_offset), 0, 1e18));
        f.push_back(number("data.n", FIELD(c.data.moons.shift.n), 2, 1e7));
        f.push_back(number("data.noise", FIELD(c.data.moons.shift.noise), 0, 1e3));
        f.push_back(number("data.angle", FIELD(c.data.moons.shift.angle_deg), -360, 360));
        f.push_back(number("data.translation_x", FIELD(c.data.moons.shift.translation(0)), -1e6, 1e6));
        f.push_back(number("data.translation_y", FIELD(c.data.moons.shift.translation(1)), -1e6, 1e6));
        f.push_back(number("data.n_test", FIELD(c.data.moons.n_test), 1, 1e7));
        f.push_back(number("data.labeled", FIELD(c.data.labeled), 2, 1e7));
        f.push_back(number("data.domains", FIELD(c.data.blobs.domains), 2, 1e3));
        f.push_back(number("data.classes", FIELD(c.data.blobs.classes), 2, 1e3));
        f.push_back(number("data.dim", FIELD(c.data.blobs.dim), 1, 1e4));
        f.push_back(number("data.per_class", FIELD(c.data.blobs.per_class), 1, 1e7));
        f.push_back(number("data.sigma", FIELD(c.data.blobs.sigma), 0, 1e3));
        f.push_back(number("data.class_radius", FIELD(c.data.blobs.class_radius), 0, 1e3));
        f.push_back(number("data.domain_shift", FIELD(c.data.blobs.shift), 0, 1e3));
        f.push_back(number("data.aml_train", FIELD(c.data.aml.n_train), 2, 1e7));
        f.push_back(number("data.weak", FIELD(c.data.aml.weak), 0, 1e4));
        f.push_back(number("data.robust_mean", FIELD(c.data.aml.robust_mean), -1e3, 1e3));
        f.push_back(number("data.robust_sd", FIELD(c.data.aml.robust_sd), 0, 1e3));
        f.push_back(number("data.weak_mean", FIELD(c.data.aml.weak_mean), -1e3, 1e3));
        f.push_back(number("data.weak_sd", FIELD(c.data.aml.weak_sd), 0, 1e3));

        f.push_back(boolean("output.svg", FIELD(c.svg)));
        return f;
    }();
    return fields;
}

#undef FIELD

const Field& find_field(const std::string& key)
{
    for (const auto& f : registry())
        if (f.key == key)
            return f;
    throw ConfigError("unknown key '" + key + "'");
}

} // namespace

train::TrainConfig default_train_config()
{
    train::TrainConfig t;
    t.weights = {5.0, 0.02, 0.5};
    return t;
}

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value)
{
    find_field(key).set(cfg, value);
}

std::string get_value(const ExperimentConfig& cfg, const std::string& key)
{
    return find_field(key).get(cfg);
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& f : registry())
        keys.push_back(f.key);
    return keys;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not key=value");
    set_value(cfg, trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text)
{
    ExperimentConfig cfg;
    std::istringstream in(text);
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(std::string_view(line).substr(0, hash));
        if (body.empty())
            continue;
        try {
            if (body.find('=') == std::string::npos)
                throw ConfigError("expected key = value");
            apply_override(cfg, body);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string serialize_config(const ExperimentConfig& cfg)
{
    std::string out;
    std::string section;
    for (const auto& f : registry()) {
        const auto dot = f.key.find('.');
        const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
        if (s != section && !out.empty())
            out += "\n";
        section = s;
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

DataKind resolved_kind(const ExperimentConfig& cfg)
{
    if (cfg.data.kind != DataKind::automatic)
        return cfg.data.kind;
    switch (cfg.train.scenario) {
    case train::Scenario::da:
    case train::Scenario::ssl:
        return DataKind::moons;
    case train::Scenario::dg:
        return DataKind::blobs;
    case train::Scenario::aml:
        return DataKind::aml_blobs;
    }
    return DataKind::moons;
}

std::uint64_t data_seed(const ExperimentConfig& cfg)
{
    return cfg.train.seed + cfg.data.seed_offset;
}

train::TrainConfig effective_train_config(const ExperimentConfig& cfg)
{
    train::TrainConfig t = train::with_preset(cfg.train, cfg.train.preset);
    switch (resolved_kind(cfg)) {
    case DataKind::blobs:
        t.layout.input_dim = cfg.data.blobs.dim;
        t.layout.classes = cfg.data.blobs.classes;
        break;
    case DataKind::aml_blobs:
        t.layout.input_dim = cfg.data.aml.weak + 1;
        t.layout.classes = 2;
        break;
    default:
        t.layout.input_dim = 2;
        t.layout.classes = 2;
    }
    t.lr_schedule.total_epochs = t.epochs;
    t.weight_schedule.total_epochs = t.epochs;
    t.lr_schedule.rampup_length = t.weight_schedule.rampup_length;
    if (cfg.eval.attack)
        t.eval_attack = cfg.eval.pgd;
    return t;
}

train::TaskData build_task(const ExperimentConfig& cfg)
{
    const auto seed = data_seed(cfg);
    switch (resolved_kind(cfg)) {
    case DataKind::blobs: {
        auto spec = cfg.data.blobs;
        spec.seed = seed;
        return train::blob_dg_task(spec);
    }
    case DataKind::aml_blobs: {
        auto spec = cfg.data.aml;
        spec.n_test = cfg.data.moons.n_test;
        spec.seed = seed;
        return train::aml_task(spec);
    }
    default: {
        auto spec = cfg.data.moons;
        spec.shift.seed = seed;
        if (cfg.train.scenario == train::Scenario::ssl)
            return train::moons_ssl_task(spec, cfg.data.labeled);
        return train::moons_da_task(spec);
    }
    }
}

void validate(const ExperimentConfig& cfg)
{
    const auto kind = resolved_kind(cfg);
    const auto sc = cfg.train.scenario;
    const bool moons_ok = kind == DataKind::moons && (sc == train::Scenario::da || sc == train::Scenario::ssl);
    const bool blobs_ok = kind == DataKind::blobs && sc == train::Scenario::dg;
    const bool aml_ok = kind == DataKind::aml_blobs && sc == train::Scenario::aml;
    if (!(moons_ok || blobs_ok || aml_ok))
        throw ConfigError("data.kind does not fit scenario " + train::to_string(sc));
    if (sc == train::Scenario::ssl && cfg.data.labeled > cfg.data.moons.shift.n)
        throw ConfigError("data.labeled exceeds data.n");
    if (cfg.data.labeled % 2 != 0 && sc == train::Scenario::ssl)
        throw ConfigError("data.labeled must split evenly over 2 classes");
    if (cfg.eval.epsilons.empty())
        throw ConfigError("eval.epsilons must not be empty");
    if (cfg.eval.attack)
        train::validate(cfg.eval.pgd);
    train::validate(effective_train_config(cfg));
}

} // namespace glotdr::app
