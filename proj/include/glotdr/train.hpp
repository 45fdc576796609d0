#ifndef GLOTDR_TRAIN_HPP
#define GLOTDR_TRAIN_HPP

#include "glotdr/core.hpp"
#include "glotdr/data.hpp"
#include "glotdr/glot.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace glotdr::train {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Scenario { da, ssl, dg, aml };
enum class Preset { erm, pgd_at, trades, lot, got, glot };

std::string to_string(Scenario s);
std::string to_string(Preset p);
Scenario parse_scenario(const std::string& s);
Preset parse_preset(const std::string& s);

struct AttackConfig {
    double epsilon = 0.1;
    int steps = 20;
    double step = 0.025;
    std::optional<double> lower; // valid input range, e.g. [0, 1] for images
    std::optional<double> upper;
};

void validate(const AttackConfig& atk);

enum class AttackObjective { cross_entropy, kl_to_clean };

struct TrainConfig {
    Scenario scenario = Scenario::da;
    Preset preset = Preset::glot;
    int epochs = 10;
    int batch_source = 32; // per source domain
    int batch_target = 32;
    NetworkLayout layout{2, {32, 32}, {}, 2, Activation::relu};
    OptimizerSpec optimizer{OptimizerKind::adam, 0.01};
    ScheduleSpec lr_schedule;
    ScheduleSpec weight_schedule; // scales alpha and beta per epoch
    glot::RiskWeights weights{1.0, 1.0, 0.5};
    glot::SamplerConfig sampler;
    ot::SinkhornConfig sinkhorn{0.1, 1e-6, 500};
    glot::Estimator estimator = glot::Estimator::sinkhorn;
    int potential_hidden = 64;
    OptimizerSpec potential_optimizer{OptimizerKind::adam, 0.01};
    AttackConfig attack;      // used by pgd_at and trades training
    double trades_beta = 1.0;
    std::optional<AttackConfig> eval_attack; // robust accuracy each epoch when set
    // glot only: at the start of each listed epoch (1-based) input-space
    // particles around every source point join that source domain
    std::vector<int> augment_epochs;
    std::uint64_t seed = 0;
};

/// Applies a preset's reductions: erm drops every extra term, lot drops the
/// global term, got drops the particles and the local term.
TrainConfig with_preset(TrainConfig cfg, Preset p);

void validate(const TrainConfig& cfg);

struct TaskData {
    std::vector<data::DomainDataset> sources; // labeled, one per source domain
    data::DomainDataset target;               // unlabeled (DA, SSL), empty otherwise
    data::DomainDataset test;                 // labeled held-out evaluation set
};

void validate(const TaskData& data, const TrainConfig& cfg);

struct MetricRecord {
    int epoch = 0;
    std::string metric;
    double value = 0.0;
};

struct MetricsTrace {
    std::vector<MetricRecord> records;

    void add(int epoch, std::string metric, double value);
    /// Value of `metric` at the last epoch that logged it.
    double last(const std::string& metric) const;
    std::vector<double> series(const std::string& metric) const;
};

struct TrainResult {
    Network<double> net;
    MetricsTrace trace;
};

TrainResult train_glot(const TrainConfig& cfg, const TaskData& data);
TrainResult train_erm(const TrainConfig& cfg, const TaskData& data);
TrainResult train_pgd_at(const TrainConfig& cfg, const TaskData& data);
TrainResult train_trades(const TrainConfig& cfg, const TaskData& data);

/// Dispatches on cfg.preset.
TrainResult run(const TrainConfig& cfg, const TaskData& data);

/// Sign-gradient ascent on the per-sample objective, projected to the
/// L-inf ball around x (and the valid range). Returns, per sample, the
/// highest-loss point among the clean input and all iterates.
Matrix pgd_attack(const Network<double>& net, const Matrix& x, const std::vector<int>& y, const AttackConfig& atk,
                  AttackObjective objective = AttackObjective::cross_entropy, std::uint64_t seed = 0);

/// Per-sample cross-entropy.
Vector sample_losses(const Network<double>& net, const Matrix& x, const std::vector<int>& y);

double evaluate(const Network<double>& net, const data::DomainDataset& d);
double evaluate_robust(const Network<double>& net, const data::DomainDataset& d, const AttackConfig& atk);

struct MoonsTask {
    data::MoonsShift shift;
    int n_test = 1000;
};

TaskData moons_da_task(const MoonsTask& spec);
TaskData moons_ssl_task(const MoonsTask& spec, int n_labeled);

/// Domains 0..K-2 train, the last domain is held out.
TaskData blob_dg_task(const data::BlobDomainsSpec& spec);

struct AmlTask {
    int n_train = 400;
    int n_test = 1000;
    int weak = 10;
    double robust_mean = 1.0;
    double robust_sd = 0.5;
    double weak_mean = 0.1;
    double weak_sd = 0.3;
    std::uint64_t seed = 0;
};

TaskData aml_task(const AmlTask& spec);

} // namespace glotdr::train

#endif // GLOTDR_TRAIN_HPP
