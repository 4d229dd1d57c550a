#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/quality.hpp"
#include "iqabench/rng.hpp"
#include "iqabench/toy_metric.hpp"

namespace iqabench {

enum class PenaltyKind { Ssim, LpipsAdapter };

inline std::string to_string(PenaltyKind p) { return p == PenaltyKind::Ssim ? "ssim" : "lpips-adapter"; }

inline PenaltyKind penalty_from_string(const std::string& s) {
    if (s == "ssim") return PenaltyKind::Ssim;
    if (s == "lpips-adapter") return PenaltyKind::LpipsAdapter;
    throw ConfigError("unknown penalty kind: " + s);
}

struct TrainingConfig {
    double epsilon = 4.0 / 255;
    PenaltyKind penalty = PenaltyKind::Ssim;
    int inner_steps = 2;
    int epochs = 1;
    int batch_size = 4;
    double learning_rate = 1e-3;
    std::string loss = "mse";  // regression loss on normalized scores
    std::uint64_t seed = 0;
    double mos_low = 0.0, mos_high = 5.0;  // label range, dataset units

    void validate() const {
        if (!(epsilon > 0)) throw ConfigError("training: epsilon must be > 0");
        if (inner_steps < 1) throw ConfigError("training: inner_steps must be >= 1");
        if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
        if (loss != "mse") throw ConfigError("training: unsupported loss '" + loss + "'");
        if (!(mos_high > mos_low)) throw ConfigError("training: invalid label range");
    }
};

inline nlohmann::json to_json(const TrainingConfig& c) {
    return {{"epsilon", c.epsilon},       {"penalty", to_string(c.penalty)},
            {"inner_steps", c.inner_steps}, {"epochs", c.epochs},
            {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
            {"loss", c.loss},             {"seed", c.seed},
            {"mos_low", c.mos_low},       {"mos_high", c.mos_high}};
}

inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.epsilon = j.value("epsilon", c.epsilon);
    c.penalty = penalty_from_string(j.value("penalty", std::string("ssim")));
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.loss = j.value("loss", c.loss);
    c.seed = j.value("seed", c.seed);
    c.mos_low = j.value("mos_low", c.mos_low);
    c.mos_high = j.value("mos_high", c.mos_high);
    c.validate();
    return c;
}

struct LabeledSample {
    Image image;
    double mos = 0.0;
};

/// Two projected sign-gradient ascent steps with step sizes 2*eps then eps,
/// momentum 0.75 from the second step on, returning the best-scoring iterate.
/// Extra steps (inner_steps > 2) continue at step size eps.
inline Image apgd2_attack(const MetricModel& m, const Image& x, double epsilon, std::uint64_t /*seed*/,
                          int inner_steps = 2, std::vector<double>* trajectory = nullptr) {
    if (!m.gradient_capable()) throw CapabilityError("apgd2 requires a gradient-capable metric");
    Image cur = x, prev = x, best = x;
    double best_score = score(m, x);
    if (trajectory) trajectory->push_back(best_score);
    if (epsilon == 0.0) return best;
    const double momentum = 0.75;
    for (int t = 0; t < inner_steps; ++t) {
        const double alpha = (t == 0 ? 2.0 * epsilon : epsilon);
        const GradientField g = normalized_gradient(m, cur);
        Image cand = cur;
        for (size_t i = 0; i < cand.data.size(); ++i)
            cand.data[i] += static_cast<float>(alpha) * (g.data[i] > 0 ? 1.0f : (g.data[i] < 0 ? -1.0f : 0.0f));
        if (t > 0)
            for (size_t i = 0; i < cand.data.size(); ++i)
                cand.data[i] = cur.data[i] + static_cast<float>(momentum) * (cand.data[i] - cur.data[i]) +
                               static_cast<float>(1.0 - momentum) * (cur.data[i] - prev.data[i]);
        for (size_t i = 0; i < cand.data.size(); ++i) {
            const float lo = std::max(0.0f, x.data[i] - static_cast<float>(epsilon));
            const float hi = std::min(1.0f, x.data[i] + static_cast<float>(epsilon));
            cand.data[i] = std::clamp(cand.data[i], lo, hi);
        }
        prev = std::move(cur);
        cur = std::move(cand);
        const double s = score(m, cur);
        if (trajectory) trajectory->push_back(s);
        if (s > best_score) {
            best_score = s;
            best = cur;
        }
    }
    return best;
}

/// Full-reference similarity for the LPIPS penalization route: distance in
/// [0, inf), smaller is more similar.
using LpipsAdapter = std::function<double(const Image&, const Image&)>;

/// Shrinks the label by perceived damage: ssim route y * SSIM(x, x_adv),
/// lpips route y * (1 - d); result clipped to the label range.
inline double penalized_label(double y, const Image& x, const Image& x_adv, PenaltyKind penalty, double label_low,
                              double label_high, const LpipsAdapter* lpips = nullptr) {
    if (!std::isfinite(y)) throw ConfigError("penalized_label: non-finite label");
    double factor;
    if (penalty == PenaltyKind::Ssim) {
        factor = ssim(x, x_adv);
    } else {
        if (!lpips || !*lpips) throw ConfigError("penalized_label: lpips adapter requested but absent");
        factor = 1.0 - (*lpips)(x, x_adv);
    }
    return std::clamp(y * factor, label_low, label_high);
}

/// A metric whose weights can be updated in place. Wraps the built-in scorer;
/// externally adapted metrics are score-only and cannot be trained.
struct TrainableMetric {
    std::shared_ptr<ToyNet> net;
    std::string identifier;
    double range_low = 0.0, range_high = 1.0;
    bool range_estimated = true;

    MetricModel model() const {
        if (!net) throw CapabilityError("metric '" + identifier + "' is not trainable");
        return wrap_toy_net(net, identifier, range_low, range_high, range_estimated);
    }
};

inline TrainableMetric make_trainable_toy(std::uint64_t seed) {
    const MetricModel m = build_toy_metric(seed);
    TrainableMetric t;
    // rebuild the same net so the weights are shared with a handle we own
    t.net = std::make_shared<ToyNet>(random_toy_net(seed));
    t.identifier = m.identifier;
    t.range_low = m.range_low;
    t.range_high = m.range_high;
    t.range_estimated = m.range_estimated;
    return t;
}

/// Min-max robust training: per sample, an inner apgd2 attack crafts x_adv,
/// its label is similarity-penalized, and MSE on normalized scores is
/// minimized over clean and adversarial pairs together. Returns a new metric;
/// the input weights are untouched.
inline TrainableMetric adversarial_train(const TrainableMetric& m, const std::vector<LabeledSample>& dataset,
                                         const TrainingConfig& cfg, const LpipsAdapter* lpips = nullptr) {
    cfg.validate();
    if (!m.net) throw CapabilityError("adversarial_train: metric is not trainable");
    if (dataset.empty()) throw ConfigError("adversarial_train: empty dataset");

    TrainableMetric out = m;
    out.net = std::make_shared<ToyNet>(*m.net);
    const double diam = out.range_high - out.range_low;
    const double label_span = cfg.mos_high - cfg.mos_low;

    // labels mapped linearly into the metric range, then normalized by diam
    auto target_of = [&](double mos) {
        const double frac = (mos - cfg.mos_low) / label_span;
        return (out.range_low + frac * diam) / diam;
    };

    auto rng = make_rng(cfg.seed, 0xAD17u);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t stop = std::min(order.size(), start + cfg.batch_size);
            const MetricModel live = out.model();  // shares out.net
            ToyNet::Grads grads;
            int terms = 0;
            for (size_t i = start; i < stop; ++i) {
                const LabeledSample& s = dataset[order[i]];
                const Image x_adv =
                    apgd2_attack(live, s.image, cfg.epsilon, mix_seed(cfg.seed, order[i]), cfg.inner_steps);
                const double y_adv =
                    penalized_label(s.mos, s.image, x_adv, cfg.penalty, cfg.mos_low, cfg.mos_high, lpips);
                for (const auto& [img, mos] : {std::pair<const Image&, double>{s.image, s.mos},
                                               std::pair<const Image&, double>{x_adv, y_adv}}) {
                    const double pred = out.net->forward(img) / diam;
                    const double dloss_dscore = 2.0 * (pred - target_of(mos)) / diam;
                    out.net->param_gradient(img, dloss_dscore, grads);
                    ++terms;
                }
            }
            out.net->sgd_step(grads, cfg.learning_rate / std::max(1, terms));
        }
    }
    return out;
}

// ---- checkpoints ----

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const TrainableMetric& m, const TrainingConfig& cfg, const std::filesystem::path& path) {
    if (!m.net) throw CapabilityError("checkpoint: metric is not trainable");
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["identifier"] = m.identifier;
    j["range_low"] = m.range_low;
    j["range_high"] = m.range_high;
    j["range_estimated"] = m.range_estimated;
    j["config"] = to_json(cfg);
    j["weights"] = m.net->flat_weights();
    std::ofstream out(path);
    if (!out) throw ConfigError("checkpoint: cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline std::pair<TrainableMetric, TrainingConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("checkpoint: cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: malformed JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("version", -1) != kCheckpointVersion)
        throw ConfigError("checkpoint: unsupported version in " + path.string());
    TrainableMetric m;
    m.net = std::make_shared<ToyNet>();
    m.identifier = j.value("identifier", "checkpoint");
    m.range_low = j.at("range_low").get<double>();
    m.range_high = j.at("range_high").get<double>();
    m.range_estimated = j.value("range_estimated", true);
    m.net->load_flat_weights(j.at("weights").get<std::vector<float>>());
    return {std::move(m), training_config_from_json(j.at("config"))};
}

}  // namespace iqabench
