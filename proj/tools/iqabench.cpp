// Command-line front end for the robustness benchmark: dataset preparation,
// attack calibration, campaign runs, and report rendering.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "iqabench/adapters.hpp"
#include "iqabench/harness.hpp"
#include "iqabench/toy_metric.hpp"

using namespace iqabench;

namespace {

nlohmann::json to_json(const DatasetRecord& r) {
    return {{"image_id", r.image_id}, {"path", r.path.string()}, {"mos", r.mos},
            {"si", r.si},             {"cf", r.cf},              {"cluster", r.cluster}};
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.mos = j.value("mos", 0.0);
    r.si = j.value("si", 0.0);
    r.cf = j.value("cf", 0.0);
    r.cluster = j.value("cluster", -1);
    return r;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

std::vector<DatasetRecord> load_selection(const fs::path& path) {
    const nlohmann::json j = read_json_file(path);
    std::vector<DatasetRecord> records;
    for (const auto& rj : j.at("records")) records.push_back(record_from_json(rj));
    return records;
}

std::vector<MetricModel> build_metrics(const CampaignConfig& cfg) {
    std::vector<MetricModel> metrics;
    for (std::uint64_t s : cfg.metric_seeds) metrics.push_back(build_toy_metric(s));
    return metrics;
}

std::map<std::string, Image> load_sources(const std::vector<DatasetRecord>& selected) {
    std::map<std::string, Image> sources;
    for (const auto& r : selected) sources[r.image_id] = load_image(r.path);
    return sources;
}

fs::path out_file(const CampaignConfig& cfg, const std::string& name) {
    const fs::path dir = cfg.output_dir.empty() ? fs::path(".") : cfg.output_dir;
    fs::create_directories(dir);
    return dir / name;
}

fs::path manifest_file(const CampaignConfig& cfg) {
    return cfg.manifest_path.empty() ? out_file(cfg, "manifest.json") : cfg.manifest_path;
}

// Stores the scientific record columns (timing zeroed for reproducibility)
// next to a per-defense timing summary.
void store_run(const CampaignConfig& cfg, const RunOutput& run, const std::string& stem) {
    write_records(out_file(cfg, stem + ".csv"), canonical_records(run.records));
    save_timings(out_file(cfg, stem + "_timings.csv"), mean_time_by_defense(run.records));
    nlohmann::json summary = {{"records", run.records.size()}, {"skipped", run.skipped}};
    std::cout << summary.dump() << "\n";
}

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers, clusters, per_cluster;
    std::optional<std::string> source_dir, mos_table, output_dir, manifest;

    void attach(CLI::App* cmd, bool config_required = true) {
        auto* c = cmd->add_option("--config", config_path, "campaign configuration file (JSON)");
        if (config_required) c->required();
        cmd->add_option("--seed", seed, "override campaign seed");
        cmd->add_option("--workers", workers, "override worker count");
        cmd->add_option("--clusters", clusters, "override cluster count");
        cmd->add_option("--per-cluster", per_cluster, "override per-cluster sample count");
        cmd->add_option("--source-dir", source_dir, "override source image directory");
        cmd->add_option("--mos-table", mos_table, "override MOS table path");
        cmd->add_option("--output-dir", output_dir, "override output directory");
        cmd->add_option("--manifest", manifest, "override manifest path");
    }

    CampaignConfig resolve() const {
        CampaignConfig cfg = load_campaign_config(config_path);
        if (seed) cfg.seed = *seed;
        if (workers) cfg.workers = *workers;
        if (clusters) cfg.clusters = *clusters;
        if (per_cluster) cfg.per_cluster = *per_cluster;
        if (source_dir) cfg.source_dir = *source_dir;
        if (mos_table) cfg.mos_table = *mos_table;
        if (output_dir) cfg.output_dir = *output_dir;
        if (manifest) cfg.manifest_path = *manifest;
        cfg.validate();
        return cfg;
    }
};

int cmd_ingest(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const IngestReport rep = ingest(cfg.source_dir, read_mos_table(cfg.mos_table));
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : rep.records) records.push_back(to_json(r));
    write_json_file(out_file(cfg, "ingest.json"), {{"records", records}, {"exceptions", rep.exceptions}});
    std::cout << nlohmann::json{{"records", rep.records.size()}, {"exceptions", rep.exceptions}}.dump() << "\n";
    return 0;
}

int cmd_cluster(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const IngestReport rep = ingest(cfg.source_dir, read_mos_table(cfg.mos_table));
    const auto selected = cluster_and_sample(rep.records, cfg.clusters, cfg.per_cluster, cfg.seed);
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : selected) records.push_back(to_json(r));
    write_json_file(out_file(cfg, "selected.json"), {{"records", records}});
    std::cout << nlohmann::json{{"selected", selected.size()}, {"clusters", cfg.clusters}}.dump() << "\n";
    return 0;
}

int cmd_calibrate(const CommonOptions& opts, const std::vector<double>& grid) {
    const CampaignConfig cfg = opts.resolve();
    const auto selected = load_selection(out_file(cfg, "selected.json"));
    std::vector<Image> images;
    for (const auto& r : selected) images.push_back(load_image(r.path));
    const std::vector<MetricModel> metrics = build_metrics(cfg);
    if (metrics.empty()) throw ConfigError("calibrate-attacks: no metrics configured");

    nlohmann::json out = nlohmann::json::object();
    for (const auto& [attack_id, preset] : cfg.presets)
        out[attack_id] = to_json(calibrate_strengths(preset.medium, metrics.front(), images, grid));
    write_json_file(out_file(cfg, "presets.json"), out);
    std::cout << nlohmann::json{{"calibrated", cfg.presets.size()}}.dump() << "\n";
    return 0;
}

int cmd_generate(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const auto selected = load_selection(out_file(cfg, "selected.json"));
    const AdversarialManifest m = generate_adversarial_dataset(selected, build_metrics(cfg), cfg.presets,
                                                               cfg.strengths, cfg.seed, cfg.output_dir,
                                                               manifest_file(cfg));
    int failed = 0;
    for (const auto& e : m.entries) failed += e.failed ? 1 : 0;
    std::cout << nlohmann::json{{"entries", m.entries.size()}, {"failed", failed}}.dump() << "\n";
    return 0;
}

int cmd_run_nonadaptive(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const AdversarialManifest m = load_manifest(manifest_file(cfg));
    const auto sources = load_sources(load_selection(out_file(cfg, "selected.json")));
    const RunOutput run = run_non_adaptive(m, sources, build_metrics(cfg), cfg.defenses, cfg.seed, cfg.workers);
    store_run(cfg, run, "records_nonadaptive");
    return 0;
}

int cmd_run_adaptive(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const auto sources = load_sources(load_selection(out_file(cfg, "selected.json")));
    const RunOutput run = run_adaptive(sources, build_metrics(cfg), cfg.defenses, cfg.presets, cfg.strengths,
                                       cfg.seed, cfg.workers, cfg.resample_stochastic);
    store_run(cfg, run, "records_adaptive");
    return 0;
}

int cmd_run_certified(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const AdversarialManifest m = load_manifest(manifest_file(cfg));
    const auto sources = load_sources(load_selection(out_file(cfg, "selected.json")));
    const auto mos = read_mos_table(cfg.mos_table);

    std::vector<CertifiedVariant> variants;
    variants.push_back({"rand-smooth", true, cfg.smoothing});
    if (cfg.smoothing.epsilon_cert > 0) variants.push_back({"median-smooth", false, cfg.smoothing});

    const auto rows = run_certified(m, sources, mos, build_metrics(cfg), variants, cfg.seed, cfg.workers);
    {
        std::ofstream csv(out_file(cfg, "certified.csv"));
        csv << emit_certified_report(rows, ReportFormat::Delimited);
        std::ofstream md(out_file(cfg, "certified.md"));
        md << emit_certified_report(rows, ReportFormat::MarkdownTable);
    }
    std::cout << nlohmann::json{{"rows", rows.size()}, {"variants", variants.size()}}.dump() << "\n";
    return 0;
}

int cmd_train_robust(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const IngestReport rep = ingest(cfg.source_dir, read_mos_table(cfg.mos_table));
    if (rep.records.empty()) throw ConfigError("train-robust: no labeled images ingested");
    std::vector<LabeledSample> dataset;
    for (const auto& r : rep.records) dataset.push_back({load_image(r.path), r.mos});

    const TrainableMetric base = make_trainable_toy(cfg.metric_seeds.front());
    const TrainableMetric trained = adversarial_train(base, dataset, cfg.training);
    const fs::path ckpt = out_file(cfg, "checkpoint.json");
    save_checkpoint(trained, cfg.training, ckpt);
    std::cout << nlohmann::json{{"checkpoint", ckpt.string()}, {"samples", dataset.size()}}.dump() << "\n";
    return 0;
}

int cmd_report(const CommonOptions& opts) {
    const CampaignConfig cfg = opts.resolve();
    const auto non_adaptive = read_records(out_file(cfg, "records_nonadaptive.csv"));
    std::vector<EvaluationRecord> adaptive;
    if (fs::exists(out_file(cfg, "records_adaptive.csv"))) adaptive = read_records(out_file(cfg, "records_adaptive.csv"));
    const auto mos = read_mos_table(cfg.mos_table);

    auto rows = make_leaderboard(non_adaptive, adaptive, mos);
    // stored records carry zeroed timings; splice the measured means back in
    if (fs::exists(out_file(cfg, "records_nonadaptive_timings.csv"))) {
        const auto timings = load_timings(out_file(cfg, "records_nonadaptive_timings.csv"));
        for (auto& r : rows)
            if (timings.count(r.defense_id)) r.time_ms = timings.at(r.defense_id);
    }

    const std::string md = emit_report(rows, ReportFormat::MarkdownTable);
    {
        std::ofstream csv(out_file(cfg, "report.csv"));
        csv << emit_report(rows, ReportFormat::Delimited);
        std::ofstream mdf(out_file(cfg, "report.md"));
        mdf << md;
    }
    std::cout << md;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial-robustness benchmark for no-reference image-quality metrics"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::vector<double> grid;
    CLI::App* ingest_cmd = app.add_subcommand("ingest", "scan source images and attach MOS labels");
    CLI::App* cluster_cmd = app.add_subcommand("cluster", "cluster by content features and sample a subset");
    CLI::App* calibrate_cmd = app.add_subcommand("calibrate-attacks", "pick weak/medium/strong attack strengths");
    CLI::App* generate_cmd = app.add_subcommand("generate-adv", "build the adversarial image dataset");
    CLI::App* run_na_cmd = app.add_subcommand("run-nonadaptive", "evaluate defenses against precomputed attacks");
    CLI::App* run_ad_cmd = app.add_subcommand("run-adaptive", "evaluate defenses against defense-aware attacks");
    CLI::App* run_cert_cmd = app.add_subcommand("run-certified", "evaluate smoothing-based certified defenses");
    CLI::App* train_cmd = app.add_subcommand("train-robust", "adversarially train the built-in scorer");
    CLI::App* report_cmd = app.add_subcommand("report", "render leaderboard reports from stored records");
    for (CLI::App* cmd : {ingest_cmd, cluster_cmd, calibrate_cmd, generate_cmd, run_na_cmd, run_ad_cmd, run_cert_cmd,
                          train_cmd, report_cmd})
        opts.attach(cmd);
    calibrate_cmd->add_option("--grid", grid, "candidate strength values")->required()->expected(-3);

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest_cmd->parsed()) return cmd_ingest(opts);
        if (cluster_cmd->parsed()) return cmd_cluster(opts);
        if (calibrate_cmd->parsed()) return cmd_calibrate(opts, grid);
        if (generate_cmd->parsed()) return cmd_generate(opts);
        if (run_na_cmd->parsed()) return cmd_run_nonadaptive(opts);
        if (run_ad_cmd->parsed()) return cmd_run_adaptive(opts);
        if (run_cert_cmd->parsed()) return cmd_run_certified(opts);
        if (train_cmd->parsed()) return cmd_train_robust(opts);
        if (report_cmd->parsed()) return cmd_report(opts);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"status", "error"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
