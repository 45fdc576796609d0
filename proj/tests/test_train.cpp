#include "doctest.h"

#include "glotdr/train.hpp"

#include <cmath>
#include <random>

using namespace glotdr;
using namespace glotdr::train;

namespace {

TaskData small_moons(std::uint64_t seed)
{
    MoonsTask task;
    task.shift.n = 120;
    task.shift.seed = seed;
    task.n_test = 200;
    return moons_da_task(task);
}

TrainConfig small_config()
{
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.layout = NetworkLayout{2, {8, 8}, {}, 2, Activation::relu};
    cfg.batch_source = 16;
    cfg.batch_target = 16;
    cfg.sampler.n_source = 2;
    cfg.sampler.n_target = 2;
    cfg.sampler.svgd.iterations = 3;
    cfg.sinkhorn = {1.0, 1e-6, 200};
    cfg.seed = 3;
    return cfg;
}

void check_same_values(const MetricsTrace& a, const MetricsTrace& b)
{
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].metric == b.records[i].metric);
        CHECK(a.records[i].epoch == b.records[i].epoch);
        CHECK(a.records[i].value == b.records[i].value);
    }
}

// One input, two logits: class 1 logit rises with x.
Network<double> linear_1d()
{
    Network<double> net;
    DenseLayer<double> l;
    l.weight.resize(2, 1);
    l.weight << -1.0, 1.0;
    l.bias = Vector::Zero(2);
    net.head.layers.push_back(l);
    return net;
}

} // namespace

TEST_CASE("glot with every extra term off reproduces erm")
{
    const auto data = small_moons(1);
    auto cfg = small_config();
    cfg.epochs = 10;
    cfg.weights = {0.0, 0.0, 0.5};
    cfg.sampler.n_source = 0;
    cfg.sampler.n_target = 0;
    const auto glot_run = train_glot(cfg, data);
    const auto erm_run = train_erm(cfg, data);
    check_same_values(glot_run.trace, erm_run.trace);
    CHECK(flatten(glot_run.net) == flatten(erm_run.net));
}

TEST_CASE("baselines reduce to erm")
{
    const auto data = small_moons(2);
    auto cfg = small_config();
    const auto erm_run = train_erm(cfg, data);
    cfg.attack.epsilon = 0.0;
    check_same_values(train_pgd_at(cfg, data).trace, erm_run.trace);
    cfg.attack.epsilon = 0.1;
    cfg.trades_beta = 0.0;
    check_same_values(train_trades(cfg, data).trace, erm_run.trace);
}

TEST_CASE("training is deterministic and logs finite components")
{
    const auto data = small_moons(3);
    auto cfg = small_config();
    const auto a = train_glot(cfg, data);
    const auto b = train_glot(cfg, data);
    check_same_values(a.trace, b.trace);
    for (const auto& r : a.trace.records) {
        CHECK(std::isfinite(r.value));
        if (r.metric == "loss_ce")
            CHECK(r.value >= 0.0);
        if (r.metric.ends_with("_acc")) {
            CHECK(r.value >= 0.0);
            CHECK(r.value <= 1.0);
        }
    }
    CHECK(a.trace.series("test_acc").size() == 3);
    CHECK(a.trace.last("loss_global") > 0.0);
    CHECK_THROWS(a.trace.last("missing"));
}

TEST_CASE("presets")
{
    TrainConfig cfg;
    cfg.weights = {2.0, 3.0, 0.5};
    auto lot = with_preset(cfg, Preset::lot);
    CHECK(lot.weights.beta == 0.0);
    CHECK(lot.weights.alpha == 2.0);
    auto got = with_preset(cfg, Preset::got);
    CHECK(got.weights.alpha == 0.0);
    CHECK(got.sampler.n_source == 0);
    CHECK(got.weights.beta == 3.0);
    auto erm = with_preset(cfg, Preset::erm);
    CHECK(erm.weights.alpha + erm.weights.beta == 0.0);
    CHECK(parse_preset("pgd_at") == Preset::pgd_at);
    CHECK(parse_scenario("dg") == Scenario::dg);
    CHECK_THROWS_AS(parse_preset("adt"), ConfigError);
}

TEST_CASE("scenario and data mismatches are configuration errors")
{
    auto cfg = small_config();
    auto data = small_moons(4);
    cfg.scenario = Scenario::dg;
    CHECK_THROWS_AS(train_glot(cfg, data), ConfigError);
    cfg.batch_target = 0;
    CHECK_THROWS_AS(train_glot(cfg, data), ConfigError);

    cfg = small_config();
    data.target = {};
    CHECK_THROWS_AS(train_glot(cfg, data), ConfigError);

    cfg = small_config();
    cfg.layout.input_dim = 3;
    CHECK_THROWS_AS(train_erm(cfg, small_moons(4)), ConfigError);
}

TEST_CASE("domain generalization, semi-supervised and adversarial runs")
{
    data::BlobDomainsSpec blobs;
    blobs.domains = 3;
    blobs.classes = 3;
    blobs.per_class = 20;
    auto cfg = small_config();
    cfg.scenario = Scenario::dg;
    cfg.batch_target = 0;
    cfg.layout.classes = 3;
    cfg.epochs = 2;
    auto dg = train_glot(cfg, blob_dg_task(blobs));
    CHECK(dg.trace.last("loss_global") > 0.0);

    cfg = small_config();
    cfg.scenario = Scenario::ssl;
    MoonsTask moons;
    moons.shift.n = 100;
    moons.n_test = 100;
    auto ssl = train_glot(cfg, moons_ssl_task(moons, 20));
    CHECK(std::isfinite(ssl.trace.last("loss_total")));

    AmlTask aml;
    aml.n_train = 64;
    aml.n_test = 64;
    aml.weak = 4;
    cfg = small_config();
    cfg.scenario = Scenario::aml;
    cfg.batch_target = 0;
    cfg.sampler.n_target = 0;
    cfg.layout.input_dim = 5;
    cfg.eval_attack = AttackConfig{0.1, 5, 0.05};
    for (auto space : {glot::SampleSpace::input, glot::SampleSpace::latent}) {
        cfg.sampler.space = space;
        auto run_aml = train_glot(cfg, aml_task(aml));
        CHECK(run_aml.trace.last("robust_acc") <= run_aml.trace.last("test_acc"));
        CHECK(std::isfinite(run_aml.trace.last("loss_global")));
    }
}

TEST_CASE("augment epochs append particles to the source domains")
{
    data::BlobDomainsSpec blobs;
    blobs.domains = 3;
    blobs.classes = 3;
    blobs.per_class = 20;
    const auto task = blob_dg_task(blobs);
    auto cfg = small_config();
    cfg.scenario = Scenario::dg;
    cfg.batch_target = 0;
    cfg.sampler.n_target = 0;
    cfg.layout.classes = 3;
    const auto plain = train_glot(cfg, task);
    cfg.augment_epochs = {2, 3};
    const auto grown = train_glot(cfg, task);
    check_same_values(train_glot(cfg, task).trace, grown.trace);

    // epoch 1 runs before the first append
    for (std::size_t i = 0; i < plain.trace.records.size(); ++i) {
        const auto& a = plain.trace.records[i];
        const auto& b = grown.trace.records[i];
        if (a.epoch == 1)
            CHECK(a.value == b.value);
        else if (a.metric == "loss_ce")
            CHECK(a.value != b.value);
    }

    cfg.augment_epochs = {4};
    CHECK_THROWS_AS(train_glot(cfg, task), ConfigError);
    cfg.augment_epochs = {2};
    cfg.sampler.space = glot::SampleSpace::latent;
    CHECK_THROWS_AS(train_glot(cfg, task), ConfigError);
}

TEST_CASE("potential estimator trains alongside the classifier")
{
    auto cfg = small_config();
    cfg.estimator = glot::Estimator::potential;
    cfg.potential_hidden = 16;
    const auto r = train_glot(cfg, small_moons(5));
    CHECK(std::isfinite(r.trace.last("loss_global")));
}

TEST_CASE("pgd_attack: zero radius and one linear step")
{
    const auto net = linear_1d();
    Matrix x(3, 1);
    x << -0.2, 0.0, 0.3;
    const std::vector<int> y{0, 0, 0};
    CHECK(pgd_attack(net, x, y, {0.0, 10, 0.05}) == x);

    const Matrix adv = pgd_attack(net, x, y, {0.1, 1, 0.04});
    // label 0 loses ground as x grows, so the step is +0.04
    for (Eigen::Index r = 0; r < 3; ++r)
        CHECK(adv(r, 0) == doctest::Approx(x(r, 0) + 0.04).epsilon(1e-15));

    AttackConfig clamp{0.1, 1, 0.04, std::nullopt, 0.0};
    const Matrix clipped = pgd_attack(net, x, y, clamp);
    CHECK(clipped(2, 0) == x(2, 0));
    CHECK(clipped(1, 0) == 0.0);
}

TEST_CASE("pgd_attack: stays in the ball and raises the loss")
{
    std::mt19937_64 rng(7);
    auto net = make_network(NetworkLayout{4, {16}, {}, 3}, rng);
    const Matrix x = Matrix::Random(200, 4);
    std::vector<int> y;
    for (int i = 0; i < 200; ++i)
        y.push_back(i % 3);
    const AttackConfig atk{0.1, 10, 0.02};
    const Matrix adv = pgd_attack(net, x, y, atk);
    CHECK((adv - x).cwiseAbs().maxCoeff() <= atk.epsilon);
    const Vector before = sample_losses(net, x, y), after = sample_losses(net, adv, y);
    int raised = 0;
    for (Eigen::Index i = 0; i < 200; ++i)
        raised += after(i) >= before(i);
    CHECK(raised >= 190);

    const Matrix kl = pgd_attack(net, x, y, atk, AttackObjective::kl_to_clean, 3);
    CHECK((kl - x).cwiseAbs().maxCoeff() <= atk.epsilon);
}

TEST_CASE("evaluate")
{
    data::DomainDataset d;
    d.inputs.resize(4, 1);
    d.inputs << -2, -1, 1, 2;
    d.labels = {0, 0, 1, 1};
    auto net = linear_1d();
    net.head.layers[0].weight *= 50.0;
    CHECK(evaluate(net, d) == 1.0);
    CHECK(evaluate_robust(net, d, {0.5, 10, 0.1}) == 1.0);
    CHECK(evaluate_robust(net, d, {1.5, 10, 0.5}) <= 0.5);

    net.head.layers[0].weight.setZero();
    // ties go to class 0
    CHECK(evaluate(net, d) == 0.5);
    CHECK_THROWS(evaluate(net, data::DomainDataset{}));
}

TEST_CASE("evaluate: untrained nets sit near chance")
{
    data::BlobDomainsSpec spec;
    spec.classes = 4;
    spec.per_class = 100;
    const auto d = data::gaussian_blob_domains(spec).datasets[0];
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::mt19937_64 rng(s);
        mean += evaluate(make_network(NetworkLayout{2, {16}, {}, 4}, rng), d);
    }
    CHECK(std::abs(mean / 20 - 0.25) <= 0.1);
}

TEST_CASE("robust accuracy never exceeds natural accuracy")
{
    auto cfg = small_config();
    cfg.epochs = 2;
    const auto data = small_moons(6);
    const auto r = train_erm(cfg, data);
    for (double eps : {0.05, 0.2})
        CHECK(evaluate_robust(r.net, data.test, {eps, 10, eps / 4}) <= evaluate(r.net, data.test));
}
