#ifndef GLOTDR_APP_CONFIG_HPP
#define GLOTDR_APP_CONFIG_HPP

#include "glotdr/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace glotdr::app {

enum class DataKind { automatic, moons, blobs, aml_blobs };

struct DataConfig {
    DataKind kind = DataKind::automatic; // picked from the scenario
    std::uint64_t seed_offset = 100;     // data seed = run seed + offset
    train::MoonsTask moons;
    int labeled = 20; // SSL labeled examples (balanced)
    data::BlobDomainsSpec blobs;
    train::AmlTask aml;
};

struct EvalConfig {
    bool attack = false;
    train::AttackConfig pgd{0.1, 20, 0.01, std::nullopt, std::nullopt};
    std::vector<double> epsilons{0.0, 0.05, 0.1, 0.2}; // attack-eval sweep
};

/// Default trade-offs for the DA scenario (alpha 5, beta 0.02).
train::TrainConfig default_train_config();

struct ExperimentConfig {
    train::TrainConfig train = default_train_config(); // before the preset and the data-derived layout are applied
    DataConfig data;
    EvalConfig eval;
    bool svg = true;
};

/// `key = value` lines, `#` comments, dotted keys. Unspecified keys keep
/// their defaults. Throws train::ConfigError on unknown keys, malformed
/// values or out-of-range settings (naming the line).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Every key, one per line, in registry order.
std::string serialize_config(const ExperimentConfig& cfg);

/// Applies a single `key=value` override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

void validate(const ExperimentConfig& cfg);

DataKind resolved_kind(const ExperimentConfig& cfg);
std::uint64_t data_seed(const ExperimentConfig& cfg);

/// Training configuration with the preset applied and the network input and
/// output sized from the data.
train::TrainConfig effective_train_config(const ExperimentConfig& cfg);
train::TaskData build_task(const ExperimentConfig& cfg);

} // namespace glotdr::app

#endif // GLOTDR_APP_CONFIG_HPP
