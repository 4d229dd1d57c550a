#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "iqabench/adv_train.hpp"
#include "iqabench/attacks.hpp"
#include "iqabench/certified.hpp"
#include "iqabench/dataset.hpp"
#include "iqabench/defenses.hpp"
#include "iqabench/evaluation.hpp"

namespace iqabench {

// ---- campaign configuration ----

enum class CampaignCase { NonAdaptive, Adaptive, Certified, AdvTraining };

inline std::string to_string(CampaignCase c) {
    switch (c) {
        case CampaignCase::NonAdaptive: return "non_adaptive";
        case CampaignCase::Adaptive: return "adaptive";
        case CampaignCase::Certified: return "certified";
        case CampaignCase::AdvTraining: return "adv_training";
    }
    return "?";
}

inline CampaignCase campaign_case_from_string(const std::string& s) {
    if (s == "non_adaptive") return CampaignCase::NonAdaptive;
    if (s == "adaptive") return CampaignCase::Adaptive;
    if (s == "certified") return CampaignCase::Certified;
    if (s == "adv_training") return CampaignCase::AdvTraining;
    throw ConfigError("unknown campaign case: " + s);
}

inline nlohmann::json to_json(const DefenseSpec& d) {
    return {{"name", to_string(d.name)}, {"param", d.param}, {"seed", d.seed}};
}

inline DefenseSpec defense_spec_from_json(const nlohmann::json& j) {
    DefenseSpec d;
    d.name = defense_from_string(j.at("name").get<std::string>());
    d.param = j.value("param", 0.0);
    d.seed = j.value("seed", std::uint64_t{0});
    if (d.name == DefenseName::External) throw ConfigError("external defenses cannot be loaded from config files");
    return d;
}

inline constexpr int kCampaignConfigVersion = 1;

struct CampaignConfig {
    CampaignCase kind = CampaignCase::NonAdaptive;
    std::vector<std::uint64_t> metric_seeds = {1};  // built-in scorer instances
    std::map<std::string, StrengthPresets> presets;
    std::vector<DefenseSpec> defenses;
    std::vector<std::string> strengths = {"medium"};
    fs::path source_dir, mos_table, output_dir, manifest_path;
    int clusters = 10, per_cluster = 1;
    std::uint64_t seed = 0;
    int workers = 1;
    bool resample_stochastic = false;  // adaptive: re-sample stochastic defenses per query
    SmoothingConfig smoothing;         // certified case
    TrainingConfig training;           // adv_training case

    void validate() const {
        if (metric_seeds.empty()) throw ConfigError("campaign: no metrics configured");
        if (workers < 1) throw ConfigError("campaign: workers must be >= 1");
        if (strengths.empty()) throw ConfigError("campaign: no strengths configured");
        if (kind == CampaignCase::Adaptive)
            for (const auto& d : defenses)
                if (!d.differentiable())
                    throw ConfigError("adaptive case: defense '" + d.id() + "' is not differentiable");
        if (kind == CampaignCase::Certified) smoothing.validate();
        if (kind == CampaignCase::AdvTraining) training.validate();
    }
};

inline nlohmann::json to_json(const CampaignConfig& c) {
    nlohmann::json defenses = nlohmann::json::array();
    for (const auto& d : c.defenses) defenses.push_back(to_json(d));
    nlohmann::json presets = nlohmann::json::object();
    for (const auto& [id, p] : c.presets) presets[id] = to_json(p);
    nlohmann::json j = {{"version", kCampaignConfigVersion},
                        {"case", to_string(c.kind)},
                        {"metric_seeds", c.metric_seeds},
                        {"presets", std::move(presets)},
                        {"defenses", std::move(defenses)},
                        {"strengths", c.strengths},
                        {"source_dir", c.source_dir.string()},
                        {"mos_table", c.mos_table.string()},
                        {"output_dir", c.output_dir.string()},
                        {"manifest_path", c.manifest_path.string()},
                        {"clusters", c.clusters},
                        {"per_cluster", c.per_cluster},
                        {"seed", c.seed},
                        {"workers", c.workers},
                        {"resample_stochastic", c.resample_stochastic}};
    j["smoothing"] = {{"sigma", c.smoothing.sigma},   {"n0", c.smoothing.n0},       {"n", c.smoothing.n},
                      {"alpha", c.smoothing.alpha},   {"epsilon_cert", c.smoothing.epsilon_cert}};
    j["training"] = to_json(c.training);
    return j;
}

inline CampaignConfig campaign_config_from_json(const nlohmann::json& j) {
    if (j.value("version", -1) != kCampaignConfigVersion) throw ConfigError("unsupported campaign config version");
    CampaignConfig c;
    std::vector<std::string> problems;
    auto guard = [&](const char* field, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            problems.push_back(std::string(field) + ": " + e.what());
        }
    };
    guard("case", [&] { c.kind = campaign_case_from_string(j.value("case", std::string("non_adaptive"))); });
    guard("metric_seeds", [&] { c.metric_seeds = j.value("metric_seeds", c.metric_seeds); });
    guard("presets", [&] {
        if (j.contains("presets"))
            for (const auto& [id, pj] : j.at("presets").items()) c.presets[id] = presets_from_json(pj);
    });
    guard("defenses", [&] {
        if (j.contains("defenses"))
            for (const auto& dj : j.at("defenses")) c.defenses.push_back(defense_spec_from_json(dj));
    });
    guard("strengths", [&] { c.strengths = j.value("strengths", c.strengths); });
    c.source_dir = j.value("source_dir", std::string{});
    c.mos_table = j.value("mos_table", std::string{});
    c.output_dir = j.value("output_dir", std::string{});
    c.manifest_path = j.value("manifest_path", std::string{});
    c.clusters = j.value("clusters", c.clusters);
    c.per_cluster = j.value("per_cluster", c.per_cluster);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.resample_stochastic = j.value("resample_stochastic", false);
    guard("smoothing", [&] {
        if (j.contains("smoothing")) {
            const auto& s = j.at("smoothing");
            c.smoothing.sigma = s.value("sigma", c.smoothing.sigma);
            c.smoothing.n0 = s.value("n0", c.smoothing.n0);
            c.smoothing.n = s.value("n", c.smoothing.n);
            c.smoothing.alpha = s.value("alpha", c.smoothing.alpha);
            c.smoothing.epsilon_cert = s.value("epsilon_cert", c.smoothing.epsilon_cert);
        }
    });
    guard("training", [&] {
        if (j.contains("training")) c.training = training_config_from_json(j.at("training"));
    });
    guard("validate", [&] { c.validate(); });
    if (!problems.empty()) {
        std::string msg = "campaign config schema errors:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    return c;
}

inline CampaignConfig load_campaign_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read campaign config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed campaign config " + path.string() + ": " + e.what());
    }
    return campaign_config_from_json(j);
}

// ---- deterministic worker pool ----

/// Runs fn(i) for i in [0, count) across `workers` threads. Results must be
/// written into preallocated slots so the output is independent of scheduling.
inline void parallel_tasks(size_t count, int workers, const std::function<void(size_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto body = [&] {
        for (size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---- campaign runs ----

struct RunOutput {
    std::vector<EvaluationRecord> records;
    std::vector<std::string> skipped;  // entries that could not be evaluated
};

namespace detail {

inline std::uint64_t task_seed(std::uint64_t campaign_seed, const std::string& key, std::uint64_t stream) {
    return mix_seed(campaign_seed, std::hash<std::string>{}(key), stream);
}

// degenerate rank variance (e.g. a constant scorer) reports zero correlation
inline double srocc_or_zero(const std::vector<double>& a, const std::vector<double>& b) {
    try {
        return srocc(a, b);
    } catch (const QualityError&) {
        return 0.0;
    }
}

inline double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Non-adaptive case: attacks were generated against the bare metric; each
/// defense is applied afterwards to both the adversarial and clean images.
inline RunOutput run_non_adaptive(const AdversarialManifest& manifest, const std::map<std::string, Image>& sources,
                                  const std::vector<MetricModel>& metrics, const std::vector<DefenseSpec>& defenses,
                                  std::uint64_t seed, int workers = 1) {
    std::map<std::string, const MetricModel*> by_id;
    for (const auto& m : metrics) by_id[m.identifier] = &m;

    struct Task {
        const ManifestEntry* entry;
        const DefenseSpec* defense;
    };
    std::vector<Task> tasks;
    std::vector<std::string> skipped;
    for (const auto& e : manifest.entries) {
        if (e.failed) {
            skipped.push_back(e.key() + ": generation failed");
            continue;
        }
        if (!by_id.count(e.metric_id)) {
            skipped.push_back(e.key() + ": metric not configured");
            continue;
        }
        if (!sources.count(e.image_id)) {
            skipped.push_back(e.key() + ": source image missing");
            continue;
        }
        if (!fs::exists(e.path)) {
            skipped.push_back(e.key() + ": adversarial file missing");
            continue;
        }
        for (const auto& d : defenses) tasks.push_back({&e, &d});
    }

    std::vector<EvaluationRecord> records(tasks.size());
    parallel_tasks(tasks.size(), workers, [&](size_t i) {
        const ManifestEntry& e = *tasks[i].entry;
        const MetricModel& m = *by_id.at(e.metric_id);
        DefenseSpec d = *tasks[i].defense;
        d.seed = detail::task_seed(seed, e.key() + "|" + d.id(), 0);
        const Image& x = sources.at(e.image_id);
        const Image x_adv = load_image(e.path);

        const auto t0 = std::chrono::steady_clock::now();
        const Image p_adv = purify(d, x_adv);
        const double elapsed = detail::ms_since(t0);
        DefenseSpec d_clean = d;
        d_clean.seed = detail::task_seed(seed, e.key() + "|" + d.id(), 1);
        const Image p_clean = purify(d_clean, x);

        EvaluationRecord r;
        r.metric_id = e.metric_id;
        r.attack_id = e.attack_id;
        r.defense_id = d.id();
        r.image_id = e.image_id;
        r.strength = e.strength;
        r.score_source = score(m, x);
        r.score_adv = score(m, x_adv);
        r.score_def_adv = score(m, p_adv);
        r.score_def_clean = score(m, p_clean);
        r.q_ssim = ssim(p_adv, x);
        r.q_psnr = psnr(p_adv, x);
        r.diam = m.diam();
        r.wall_time_ms = elapsed;
        r.seed = d.seed;
        records[i] = std::move(r);
    });
    return {std::move(records), std::move(skipped)};
}

/// Adaptive case: attacks run against g = f(P(.)) with gradients through the
/// defense. Stochastic defenses keep a fixed per-task seed during the attack
/// (or re-sample per query when resample_stochastic); evaluation re-applies
/// the defense with a fresh seed.
inline RunOutput run_adaptive(const std::map<std::string, Image>& sources, const std::vector<MetricModel>& metrics,
                              const std::vector<DefenseSpec>& defenses,
                              const std::map<std::string, StrengthPresets>& presets,
                              const std::vector<std::string>& strengths, std::uint64_t seed, int workers = 1,
                              bool resample_stochastic = false) {
    for (const auto& d : defenses)
        if (!d.differentiable())
            throw ConfigError("adaptive case: defense '" + d.id() + "' is not differentiable");

    struct Task {
        const std::string* image_id;
        const Image* x;
        const MetricModel* m;
        const DefenseSpec* defense;
        const std::string* attack_id;
        const StrengthPresets* preset;
        const std::string* strength;
        std::string key;
    };
    std::vector<Task> tasks;
    for (const auto& [image_id, x] : sources)
        for (const auto& m : metrics)
            for (const auto& d : defenses)
                for (const auto& [attack_id, preset] : presets)
                    for (const auto& strength : strengths)
                        tasks.push_back({&image_id, &x, &m, &d, &attack_id, &preset, &strength,
                                         image_id + "|" + attack_id + "|" + m.identifier + "|" + strength + "|" +
                                             d.id()});

    std::vector<EvaluationRecord> records(tasks.size());
    parallel_tasks(tasks.size(), workers, [&](size_t i) {
        const Task& t = tasks[i];
        DefenseSpec d_attack = *t.defense;
        d_attack.seed = detail::task_seed(seed, t.key, 0);

        MetricModel g = compose_defended_metric(*t.m, d_attack);
        if (resample_stochastic && t.defense->stochastic()) {
            // expectation-over-transform alternative: every query sees a fresh draw
            auto counter = std::make_shared<std::atomic<std::uint64_t>>(0);
            const MetricModel base = *t.m;
            const DefenseSpec proto = d_attack;
            g.score_fn = [base, proto, counter](const Image& img) {
                DefenseSpec d = proto;
                d.seed = mix_seed(proto.seed, counter->fetch_add(1));
                return score(base, purify(d, img));
            };
            g.grad_fn = [base, proto, counter](const Image& img) {
                DefenseSpec d = proto;
                d.seed = mix_seed(proto.seed, counter->fetch_add(1));
                const Image px = purify(d, img);
                return purify_vjp(d, img, gradient(base, px));
            };
        }

        AttackSpec spec = preset_for_strength(*t.preset, *t.strength);
        spec.seed = detail::task_seed(seed, t.key, 1);
        const AttackResult ar = run_attack(spec, g, *t.x);

        // evaluation re-applies the defense with fresh seeds
        DefenseSpec d_eval = *t.defense;
        d_eval.seed = detail::task_seed(seed, t.key, 2);
        const auto t0 = std::chrono::steady_clock::now();
        const Image p_adv = purify(d_eval, ar.adversarial);
        const double elapsed = detail::ms_since(t0);
        DefenseSpec d_clean = *t.defense;
        d_clean.seed = detail::task_seed(seed, t.key, 3);
        const Image p_clean = purify(d_clean, *t.x);

        EvaluationRecord r;
        r.metric_id = t.m->identifier;
        r.attack_id = *t.attack_id;
        r.defense_id = t.defense->id();
        r.image_id = *t.image_id;
        r.strength = *t.strength;
        r.score_source = score(*t.m, *t.x);
        r.score_adv = score(*t.m, ar.adversarial);
        r.score_def_adv = score(*t.m, p_adv);
        r.score_def_clean = score(*t.m, p_clean);
        r.q_ssim = ssim(p_adv, *t.x);
        r.q_psnr = psnr(p_adv, *t.x);
        r.diam = t.m->diam();
        r.wall_time_ms = elapsed;
        r.seed = spec.seed;
        records[i] = std::move(r);
    });
    return {std::move(records), {}};
}

// ---- certified campaign ----

struct CertifiedVariant {
    std::string id;                // e.g. "rs", "ms", "drs"
    bool classification = true;    // false: median smoothing
    SmoothingConfig cfg;
};

struct CertifiedRow {
    std::string defense_id, metric_id;
    double d_score_def = 0;      // D_score^(D) over smoothed outputs
    double srocc_adv = 0, srocc_clear = 0;
    double mean_radius = 0;      // clean-input certified radius, non-abstained
    double abstention_pct = 0;   // clean-input abstentions
    double mean_rel_delta = 0;   // regression route only
    int images = 0;
};

/// Evaluation score of a classification certificate: the center of the
/// predicted quality segment (out-of-range classes sit half a segment outside).
inline double bin_center(int cls, const QualityClassBinning& b) {
    const double w = (b.range_high - b.range_low) / b.segments;
    if (cls <= 0) return b.range_low - 0.5 * w;
    if (cls >= b.segments + 1) return b.range_high + 0.5 * w;
    return b.range_low + (cls - 0.5) * w;
}

/// Certifies every manifest entry's metric on clean and attacked inputs and
/// reduces to Table-5-shaped rows per (variant x metric).
inline std::vector<CertifiedRow> run_certified(const AdversarialManifest& manifest,
                                               const std::map<std::string, Image>& sources,
                                               const std::map<std::string, double>& mos,
                                               const std::vector<MetricModel>& metrics,
                                               const std::vector<CertifiedVariant>& variants, std::uint64_t seed,
                                               int workers = 1) {
    std::map<std::string, const MetricModel*> by_id;
    for (const auto& m : metrics) by_id[m.identifier] = &m;

    struct Task {
        const CertifiedVariant* variant;
        const ManifestEntry* entry;
    };
    struct Outcome {
        double clean_score = 0, adv_score = 0, radius = 0, rel_delta = 0, mos = 0, diam = 1;
        bool abstained = false, valid = false;
    };
    std::vector<Task> tasks;
    for (const auto& v : variants)
        for (const auto& e : manifest.entries)
            if (!e.failed && by_id.count(e.metric_id) && sources.count(e.image_id) && fs::exists(e.path))
                tasks.push_back({&v, &e});

    std::vector<Outcome> outcomes(tasks.size());
    parallel_tasks(tasks.size(), workers, [&](size_t i) {
        const CertifiedVariant& v = *tasks[i].variant;
        const ManifestEntry& e = *tasks[i].entry;
        const MetricModel& m = *by_id.at(e.metric_id);
        const Image& x = sources.at(e.image_id);
        const Image x_adv = load_image(e.path);
        const std::uint64_t s_clean = detail::task_seed(seed, v.id + "|" + e.key(), 0);
        const std::uint64_t s_adv = detail::task_seed(seed, v.id + "|" + e.key(), 1);

        Outcome o;
        o.diam = m.diam();
        o.mos = mos.count(e.image_id) ? mos.at(e.image_id) : 0.0;
        if (v.classification) {
            const QualityClassBinning b{m.range_low, m.range_high, 10};
            const CertificationResult rc = smooth_classify_certify(m, x, b, v.cfg, s_clean);
            const CertificationResult ra = smooth_classify_certify(m, x_adv, b, v.cfg, s_adv);
            o.clean_score = bin_center(rc.quality_class, b);
            o.adv_score = bin_center(ra.quality_class, b);
            o.abstained = rc.abstained;
            o.radius = rc.certified_radius.value_or(0.0);
        } else {
            const CertificationResult rc = certify_median_delta(m, x, v.cfg, s_clean);
            const CertificationResult ra = certify_median_delta(m, x_adv, v.cfg, s_adv);
            o.clean_score = rc.score;
            o.adv_score = ra.score;
            o.rel_delta = rc.certified_relative_delta.value_or(0.0);
        }
        o.valid = true;
        outcomes[i] = o;
    });

    // reduce to (variant x metric) rows
    std::map<std::pair<std::string, std::string>, std::vector<size_t>> groups;
    for (size_t i = 0; i < tasks.size(); ++i)
        groups[{tasks[i].variant->id, tasks[i].entry->metric_id}].push_back(i);
    std::vector<CertifiedRow> rows;
    for (const auto& [key, idx] : groups) {
        CertifiedRow row;
        row.defense_id = key.first;
        row.metric_id = key.second;
        std::vector<double> mos_v, clean_v, adv_v;
        double d_acc = 0, rad_acc = 0, rel_acc = 0;
        int certified = 0, abstained = 0;
        for (size_t i : idx) {
            const Outcome& o = outcomes[i];
            d_acc += std::abs(o.adv_score - o.clean_score) / o.diam * 100.0;
            mos_v.push_back(o.mos);
            clean_v.push_back(o.clean_score);
            adv_v.push_back(o.adv_score);
            rel_acc += o.rel_delta;
            if (o.abstained)
                ++abstained;
            else {
                rad_acc += o.radius;
                ++certified;
            }
        }
        row.images = static_cast<int>(idx.size());
        row.d_score_def = d_acc / idx.size();
        row.mean_radius = certified ? rad_acc / certified : 0.0;
        row.abstention_pct = 100.0 * abstained / idx.size();
        row.mean_rel_delta = rel_acc / idx.size();
        row.srocc_clear = idx.size() >= 2 ? detail::srocc_or_zero(mos_v, clean_v) : 0.0;
        row.srocc_adv = idx.size() >= 2 ? detail::srocc_or_zero(mos_v, adv_v) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- reports ----

enum class ReportFormat { Delimited, MarkdownTable };

struct LeaderboardRow {
    std::string defense_id;
    double srocc_clear = 0;
    double time_ms = 0;
    double d_na = 0, srocc_adv_na = 0, q_na = 0;       // non-adaptive block
    std::optional<double> d_ad, srocc_adv_ad;          // adaptive block
};

/// Collapses evaluation records plus MOS into one leaderboard row per defense.
inline std::vector<LeaderboardRow> make_leaderboard(const std::vector<EvaluationRecord>& non_adaptive,
                                                    const std::vector<EvaluationRecord>& adaptive,
                                                    const std::map<std::string, double>& mos) {
    if (non_adaptive.empty()) throw EvaluationError("make_leaderboard: no non-adaptive records");
    std::map<std::string, std::vector<EvaluationRecord>> by_def, by_def_ad;
    for (const auto& r : non_adaptive) by_def[r.defense_id].push_back(r);
    for (const auto& r : adaptive) by_def_ad[r.defense_id].push_back(r);

    auto srocc_of = [&](const std::vector<EvaluationRecord>& rs, bool adv) {
        // mean defended score per image against its MOS
        std::map<std::string, std::pair<double, int>> per_image;
        for (const auto& r : rs) {
            auto& [acc, n] = per_image[r.image_id];
            acc += adv ? r.score_def_adv : r.score_def_clean;
            ++n;
        }
        std::vector<double> y, s;
        for (const auto& [id, accn] : per_image) {
            if (!mos.count(id)) continue;
            y.push_back(mos.at(id));
            s.push_back(accn.first / accn.second);
        }
        return y.size() >= 2 ? detail::srocc_or_zero(y, s) : 0.0;
    };

    std::vector<LeaderboardRow> rows;
    for (const auto& [id, rs] : by_def) {
        LeaderboardRow row;
        row.defense_id = id;
        row.d_na = d_score(rs);
        row.q_na = q_score(rs);
        row.srocc_clear = srocc_of(rs, false);
        row.srocc_adv_na = srocc_of(rs, true);
        double t = 0;
        for (const auto& r : rs) t += r.wall_time_ms;
        row.time_ms = t / rs.size();
        if (by_def_ad.count(id)) {
            row.d_ad = d_score(by_def_ad.at(id));
            row.srocc_adv_ad = srocc_of(by_def_ad.at(id), true);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Record files must be byte-identical across same-seed reruns, but wall-clock
/// timing is measurement noise. Stored records therefore carry a zeroed timing
/// column; the measured times travel in a separate per-defense summary.
inline std::vector<EvaluationRecord> canonical_records(std::vector<EvaluationRecord> records) {
    for (auto& r : records) r.wall_time_ms = 0.0;
    return records;
}

inline std::map<std::string, double> mean_time_by_defense(const std::vector<EvaluationRecord>& records) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : records) {
        acc[r.defense_id].first += r.wall_time_ms;
        ++acc[r.defense_id].second;
    }
    std::map<std::string, double> out;
    for (const auto& [id, p] : acc) out[id] = p.first / p.second;
    return out;
}

inline void save_timings(const fs::path& path, const std::map<std::string, double>& timings) {
    std::ofstream out(path);
    if (!out) throw EvaluationError("cannot write timings file " + path.string());
    out << "# iqabench-timings v1\ndefense_id,mean_time_ms\n";
    out.precision(17);
    for (const auto& [id, ms] : timings) out << id << ',' << ms << "\n";
}

inline std::map<std::string, double> load_timings(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw EvaluationError("cannot read timings file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "# iqabench-timings v1")
        throw EvaluationError("unsupported timings file version in " + path.string());
    std::getline(in, line);  // column header
    std::map<std::string, double> out;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw EvaluationError("malformed timings row: " + line);
        out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    return out;
}

namespace detail {

inline std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v;
    return os.str();
}

// marks the best (**v**) and second-best (*v*) value per column in markdown
struct ColumnMarks {
    int best = -1, second = -1;
};

inline ColumnMarks rank_column(const std::vector<double>& vals, bool higher_better) {
    ColumnMarks m;
    for (int i = 0; i < static_cast<int>(vals.size()); ++i) {
        if (m.best < 0 || (higher_better ? vals[i] > vals[m.best] : vals[i] < vals[m.best])) {
            m.second = m.best;
            m.best = i;
        } else if (m.second < 0 || (higher_better ? vals[i] > vals[m.second] : vals[i] < vals[m.second])) {
            m.second = i;
        }
    }
    return m;
}

}  // namespace detail

inline constexpr const char* kReportFooter =
    "dispersion: population standard deviation across attack x metric cell means; "
    "psnr clamped at 40 dB; adaptive '---': defense not differentiable";

/// Renders the main leaderboard. Column order: SROCC_clear, Mean Time(ms),
/// non-adaptive D_score / SROCC_adv / Q_score, adaptive D_score / SROCC_adv.
inline std::string emit_report(std::vector<LeaderboardRow> rows, ReportFormat format) {
    if (rows.empty()) throw EvaluationError("emit_report: empty leaderboard");
    std::sort(rows.begin(), rows.end(),
              [](const LeaderboardRow& a, const LeaderboardRow& b) { return a.defense_id < b.defense_id; });

    const int n = static_cast<int>(rows.size());
    std::ostringstream out;
    if (format == ReportFormat::Delimited) {
        out << "# iqabench-leaderboard v1\n";
        out << "defense,srocc_clear,mean_time_ms,d_score,srocc_adv,q_score,adaptive_d_score,adaptive_srocc_adv\n";
        out.precision(17);
        for (const auto& r : rows) {
            out << r.defense_id << ',' << r.srocc_clear << ',' << r.time_ms << ',' << r.d_na << ',' << r.srocc_adv_na
                << ',' << r.q_na << ',';
            if (r.d_ad) out << *r.d_ad;
            out << ',';
            if (r.srocc_adv_ad) out << *r.srocc_adv_ad;
            out << "\n";
        }
        out << "# " << kReportFooter << "\n";
        return out.str();
    }

    // markdown: best / second-best marking per column
    auto col = [&](auto get, bool higher_better) {
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) v[i] = get(rows[i]);
        return detail::rank_column(v, higher_better);
    };
    const auto m_sc = col([](const LeaderboardRow& r) { return r.srocc_clear; }, true);
    const auto m_t = col([](const LeaderboardRow& r) { return r.time_ms; }, false);
    const auto m_d = col([](const LeaderboardRow& r) { return r.d_na; }, false);
    const auto m_sa = col([](const LeaderboardRow& r) { return r.srocc_adv_na; }, true);
    const auto m_q = col([](const LeaderboardRow& r) { return r.q_na; }, true);
    auto mark = [&](int i, const detail::ColumnMarks& m, double v) {
        const std::string s = detail::fmt_num(v);
        if (i == m.best) return "**" + s + "**";
        if (i == m.second) return "*" + s + "*";
        return s;
    };
    out << "| Defense | SROCC_clear | Mean Time(ms) | D_score | SROCC_adv | Q_score | D_score (adaptive) | "
           "SROCC_adv (adaptive) |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (int i = 0; i < n; ++i) {
        const LeaderboardRow& r = rows[i];
        out << "| " << r.defense_id << " | " << mark(i, m_sc, r.srocc_clear) << " | " << mark(i, m_t, r.time_ms)
            << " | " << mark(i, m_d, r.d_na) << " | " << mark(i, m_sa, r.srocc_adv_na) << " | "
            << mark(i, m_q, r.q_na) << " | " << (r.d_ad ? detail::fmt_num(*r.d_ad) : std::string("---")) << " | "
            << (r.srocc_adv_ad ? detail::fmt_num(*r.srocc_adv_ad) : std::string("---")) << " |\n";
    }
    out << "\n" << kReportFooter << "\n";
    return out.str();
}

/// Renders the certified-defense comparison. Column order: D_score^(D),
/// SROCC_adv, SROCC_clear, Cert.R, Abst.(%), Cert.RD.
inline std::string emit_certified_report(std::vector<CertifiedRow> rows, ReportFormat format) {
    if (rows.empty()) throw EvaluationError("emit_certified_report: empty row set");
    std::sort(rows.begin(), rows.end(), [](const CertifiedRow& a, const CertifiedRow& b) {
        return std::tie(a.defense_id, a.metric_id) < std::tie(b.defense_id, b.metric_id);
    });
    std::ostringstream out;
    if (format == ReportFormat::Delimited) {
        out << "# iqabench-certified v1\n";
        out << "defense,metric,d_score_def,srocc_adv,srocc_clear,cert_r,abst_pct,cert_rd\n";
        out.precision(17);
        for (const auto& r : rows)
            out << r.defense_id << ',' << r.metric_id << ',' << r.d_score_def << ',' << r.srocc_adv << ','
                << r.srocc_clear << ',' << r.mean_radius << ',' << r.abstention_pct << ',' << r.mean_rel_delta
                << "\n";
        out << "# " << kReportFooter << "\n";
        return out.str();
    }
    out << "| Defense | Metric | D_score^(D) | SROCC_adv | SROCC_clear | Cert.R | Abst.(%) | Cert.RD |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows)
        out << "| " << r.defense_id << " | " << r.metric_id << " | " << detail::fmt_num(r.d_score_def) << " | "
            << detail::fmt_num(r.srocc_adv) << " | " << detail::fmt_num(r.srocc_clear) << " | "
            << detail::fmt_num(r.mean_radius) << " | " << detail::fmt_num(r.abstention_pct) << " | "
            << detail::fmt_num(r.mean_rel_delta) << " |\n";
    out << "\n" << kReportFooter << "\n";
    return out.str();
}

/// Parses a delimited leaderboard back into rows (round-trip check support).
inline std::vector<LeaderboardRow> parse_leaderboard(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "# iqabench-leaderboard v1")
        throw EvaluationError("unsupported leaderboard version");
    std::getline(in, line);  // column header
    std::vector<LeaderboardRow> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string tok;
        std::vector<std::string> cols;
        while (std::getline(row, tok, ',')) cols.push_back(tok);
        while (cols.size() < 8) cols.push_back("");
        LeaderboardRow r;
        r.defense_id = cols[0];
        r.srocc_clear = std::stod(cols[1]);
        r.time_ms = std::stod(cols[2]);
        r.d_na = std::stod(cols[3]);
        r.srocc_adv_na = std::stod(cols[4]);
        r.q_na = std::stod(cols[5]);
        if (!cols[6].empty()) r.d_ad = std::stod(cols[6]);
        if (!cols[7].empty()) r.srocc_adv_ad = std::stod(cols[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace iqabench
