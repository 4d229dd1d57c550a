#include <doctest.h>

#include <cmath>
#include <fstream>

#include "iqabench/adapters.hpp"
#include "iqabench/adv_train.hpp"
#include "iqabench/attacks.hpp"

using namespace iqabench;

namespace {

Image interior_random(int h, int w, std::uint64_t seed) {
    Image img = random_image(h, w, seed);
    for (auto& v : img.data) v = 0.25f + 0.5f * v;
    return img;
}

std::vector<LabeledSample> toy_dataset(int n, std::uint64_t seed) {
    std::vector<LabeledSample> ds;
    for (int i = 0; i < n; ++i) {
        LabeledSample s;
        s.image = interior_random(16, 16, mix_seed(seed, std::uint64_t(i)));
        s.mos = 1.0 + 3.0 * (i % 5) / 4.0;  // spread over [1, 4]
        ds.push_back(std::move(s));
    }
    return ds;
}

double weight_delta(const ToyNet& a, const ToyNet& b) {
    const auto wa = a.flat_weights(), wb = b.flat_weights();
    double d = 0;
    for (size_t i = 0; i < wa.size(); ++i) d += std::abs(double(wa[i]) - wb[i]);
    return d;
}

}  // namespace

TEST_CASE("apgd2: identity at zero budget, budget soundness, best iterate") {
    const MetricModel toy = build_toy_metric(101);
    const Image x = interior_random(16, 16, 102);

    const Image id = apgd2_attack(toy, x, 0.0, 1);
    CHECK(id.data == x.data);

    const double eps = 4.0 / 255;
    std::vector<double> traj;
    const Image adv = apgd2_attack(toy, x, eps, 1, 2, &traj);
    CHECK(linf_distance(adv, x) <= eps + 1e-6);
    for (float v : adv.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(traj.size() == 3);  // source + two visited iterates
    const double returned = score(toy, adv);
    for (double s : traj) CHECK(returned >= s - 1e-9);

    MetricModel blind = toy;
    blind.grad_fn = nullptr;
    CHECK_THROWS_AS(apgd2_attack(blind, x, eps, 1), CapabilityError);
}

TEST_CASE("penalized_label: ssim and lpips routes") {
    const Image x = interior_random(16, 16, 103);
    CHECK(penalized_label(4.0, x, x, PenaltyKind::Ssim, 0.0, 5.0) == doctest::Approx(4.0));

    // the ssim route is the stated product rule, clipped
    Image xa = x;
    for (auto& v : xa.data) v = std::clamp(v + 0.05f, 0.0f, 1.0f);
    const double s = ssim(x, xa);
    CHECK(penalized_label(4.0, x, xa, PenaltyKind::Ssim, 0.0, 5.0) == doctest::Approx(4.0 * s));

    // lpips route: distance 0.2 -> factor 0.8
    LpipsAdapter fake = [](const Image&, const Image&) { return 0.2; };
    CHECK(penalized_label(4.0, x, xa, PenaltyKind::LpipsAdapter, 0.0, 5.0, &fake) == doctest::Approx(3.2));

    // negative product clips to the label-range minimum
    LpipsAdapter huge = [](const Image&, const Image&) { return 1.5; };
    CHECK(penalized_label(4.0, x, xa, PenaltyKind::LpipsAdapter, 1.0, 5.0, &huge) == doctest::Approx(1.0));

    CHECK_THROWS_AS(penalized_label(4.0, x, xa, PenaltyKind::LpipsAdapter, 0.0, 5.0, nullptr), ConfigError);
}

TEST_CASE("adversarial_train: weight movement, zero-epoch identity, determinism") {
    const TrainableMetric base = make_trainable_toy(104);
    const auto ds = toy_dataset(8, 105);

    TrainingConfig cfg;
    cfg.epsilon = 2.0 / 255;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-2;
    cfg.seed = 7;

    const std::vector<float> before = base.net->flat_weights();
    const TrainableMetric trained = adversarial_train(base, ds, cfg);
    CHECK(base.net->flat_weights() == before);  // source untouched
    CHECK(weight_delta(*base.net, *trained.net) > 0.0);

    TrainingConfig zero = cfg;
    zero.epochs = 0;
    const TrainableMetric same = adversarial_train(base, ds, zero);
    CHECK(same.net->flat_weights() == before);

    const TrainableMetric again = adversarial_train(base, ds, cfg);
    CHECK(again.net->flat_weights() == trained.net->flat_weights());

    CHECK_THROWS_AS(adversarial_train(base, {}, cfg), ConfigError);
    TrainableMetric untrainable = base;
    untrainable.net = nullptr;
    CHECK_THROWS_AS(adversarial_train(untrainable, ds, cfg), CapabilityError);
    CHECK_THROWS_AS(untrainable.model(), CapabilityError);

    TrainingConfig bad = cfg;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(adversarial_train(base, ds, bad), ConfigError);
}

TEST_CASE("adversarial_train: attack gain shrinks on held-out images") {
    const TrainableMetric base = make_trainable_toy(106);
    const auto ds = toy_dataset(8, 107);

    TrainingConfig cfg;
    cfg.epsilon = 4.0 / 255;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 5e-2;
    cfg.seed = 11;
    const TrainableMetric trained = adversarial_train(base, ds, cfg);

    auto mean_gain = [&](const MetricModel& m) {
        double acc = 0;
        for (int i = 0; i < 4; ++i) {
            const Image x = interior_random(16, 16, mix_seed(std::uint64_t(900), std::uint64_t(i)));
            const AttackResult r = attack_ifgsm(m, x, 1.0 / 255, 5, 4.0 / 255);
            acc += (r.score_after - r.score_before) / m.diam();
        }
        return acc / 4;
    };
    const double gain_before = mean_gain(base.model());
    const double gain_after = mean_gain(trained.model());
    CHECK(gain_after < gain_before);
}

TEST_CASE("checkpoint round trip") {
    const TrainableMetric base = make_trainable_toy(108);
    TrainingConfig cfg;
    cfg.epsilon = 8.0 / 255;
    cfg.penalty = PenaltyKind::Ssim;
    cfg.seed = 3;

    const fs::path path = unique_temp_path("ckpt", ".json");
    save_checkpoint(base, cfg, path);
    const auto [loaded, cfg2] = load_checkpoint(path);
    CHECK(loaded.net->flat_weights() == base.net->flat_weights());
    CHECK(loaded.range_low == base.range_low);
    CHECK(loaded.range_high == base.range_high);
    CHECK(loaded.identifier == base.identifier);
    CHECK(cfg2.epsilon == cfg.epsilon);
    CHECK(cfg2.seed == cfg.seed);

    // identical behavior after reload
    const Image x = interior_random(16, 16, 109);
    CHECK(score(loaded.model(), x) == doctest::Approx(score(base.model(), x)));
    fs::remove(path);

    const fs::path bad = unique_temp_path("ckpt-bad", ".json");
    {
        std::ofstream out(bad);
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), ConfigError);
    fs::remove(bad);
    CHECK_THROWS_AS(load_checkpoint(unique_temp_path("ckpt-missing", ".json")), ConfigError);
}

TEST_CASE("training config serialization and validation") {
    TrainingConfig c;
    c.epsilon = 2.0 / 255;
    c.penalty = PenaltyKind::LpipsAdapter;
    c.inner_steps = 3;
    c.epochs = 5;
    c.batch_size = 2;
    c.learning_rate = 1e-4;
    c.seed = 42;
    const TrainingConfig d = training_config_from_json(to_json(c));
    CHECK(d.epsilon == c.epsilon);
    CHECK(d.penalty == c.penalty);
    CHECK(d.inner_steps == c.inner_steps);
    CHECK(d.epochs == c.epochs);
    CHECK(d.batch_size == c.batch_size);
    CHECK(d.learning_rate == c.learning_rate);
    CHECK(d.seed == c.seed);

    nlohmann::json j = to_json(c);
    j["inner_steps"] = 0;
    CHECK_THROWS_AS(training_config_from_json(j), ConfigError);
    j = to_json(c);
    j["loss"] = "huber";
    CHECK_THROWS_AS(training_config_from_json(j), ConfigError);
    CHECK_THROWS_AS(penalty_from_string("tv"), ConfigError);
}
