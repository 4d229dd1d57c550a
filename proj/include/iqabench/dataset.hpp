#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iqabench/attacks.hpp"
#include "iqabench/image.hpp"
#include "iqabench/quality.hpp"
#include "iqabench/rng.hpp"

namespace iqabench {

namespace fs = std::filesystem;

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetRecord {
    std::string image_id;
    fs::path path;
    double mos = 0.0;
    double si = 0.0, cf = 0.0;  // spatial information, colorfulness
    int cluster = -1;
};

struct IngestReport {
    std::vector<DatasetRecord> records;
    std::vector<std::string> exceptions;  // excluded images with reasons
};

/// MOS table: delimited text, one "image_id,mos" per line; '#' comments.
inline std::map<std::string, double> read_mos_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot read MOS table " + path.string());
    std::map<std::string, double> mos;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw DatasetError("MOS table " + path.string() + ": malformed line " + std::to_string(lineno));
        try {
            mos[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw DatasetError("MOS table " + path.string() + ": bad value on line " + std::to_string(lineno));
        }
    }
    return mos;
}

/// Scans a directory for raster images, computes SI/CF features, joins MOS.
/// Images without a MOS row (or that fail to decode) are excluded and listed
/// in the exceptions report.
inline IngestReport ingest(const fs::path& directory, const std::map<std::string, double>& mos) {
    if (!fs::is_directory(directory)) throw DatasetError("not a directory: " + directory.string());
    IngestReport report;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(directory)) {
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const std::string id = f.stem().string();
        const auto it = mos.find(id);
        if (it == mos.end()) {
            report.exceptions.push_back(id + ": no MOS entry");
            continue;
        }
        DatasetRecord r;
        try {
            const Image img = load_image(f);
            r.si = spatial_information(img);
            r.cf = colorfulness(img);
        } catch (const std::exception& e) {
            report.exceptions.push_back(id + ": " + e.what());
            continue;
        }
        r.image_id = id;
        r.path = f;
        r.mos = it->second;
        report.records.push_back(std::move(r));
    }
    return report;
}

// ---- k-means over (SI, CF, MOS) ----

namespace detail {

using Feature = std::array<double, 3>;

inline double sqdist(const Feature& a, const Feature& b) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

inline std::vector<Feature> znormalize(std::vector<Feature> f) {
    for (int d = 0; d < 3; ++d) {
        double mean = 0;
        for (const auto& x : f) mean += x[d];
        mean /= f.size();
        double var = 0;
        for (const auto& x : f) var += (x[d] - mean) * (x[d] - mean);
        const double sd = std::sqrt(var / f.size());
        for (auto& x : f) x[d] = sd > 0 ? (x[d] - mean) / sd : 0.0;
    }
    return f;
}

struct KMeansResult {
    std::vector<int> assignment;
    std::vector<Feature> centers;
};

inline KMeansResult kmeans(const std::vector<Feature>& pts, int k, std::uint64_t seed, int max_iters = 100) {
    auto rng = make_rng(seed, 0x5EA7u);
    const int n = static_cast<int>(pts.size());
    KMeansResult r;
    r.centers.reserve(k);

    // k-means++ seeding
    std::uniform_int_distribution<int> first(0, n - 1);
    r.centers.push_back(pts[first(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(r.centers.size()) < k) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            double best = sqdist(pts[i], r.centers[0]);
            for (size_t c = 1; c < r.centers.size(); ++c) best = std::min(best, sqdist(pts[i], r.centers[c]));
            d2[i] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng), acc = 0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);  // all points coincide with a center
        }
        r.centers.push_back(pts[pick]);
    }

    r.assignment.assign(n, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sqdist(pts[i], r.centers[0]);
            for (int c = 1; c < k; ++c) {
                const double d = sqdist(pts[i], r.centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (best != r.assignment[i]) changed = true;
            r.assignment[i] = best;
        }
        std::vector<Feature> sums(k, Feature{0, 0, 0});
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            for (int d = 0; d < 3; ++d) sums[r.assignment[i]][d] += pts[i][d];
            ++counts[r.assignment[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // reseed an empty cluster with the point farthest from its center
                int far = 0;
                double fd = -1;
                for (int i = 0; i < n; ++i) {
                    const double d = sqdist(pts[i], r.centers[r.assignment[i]]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                r.centers[c] = pts[far];
                changed = true;
            } else {
                for (int d = 0; d < 3; ++d) r.centers[c][d] = sums[c][d] / counts[c];
            }
        }
        if (!changed && iter > 0) break;
    }
    return r;
}

}  // namespace detail

/// K-Means over z-normalized (SI, CF, MOS), then per_cluster uniform picks per
/// cluster. Returned records carry their cluster index.
inline std::vector<DatasetRecord> cluster_and_sample(std::vector<DatasetRecord> records, int k, int per_cluster,
                                                     std::uint64_t seed) {
    if (k < 1) throw ConfigError("cluster_and_sample: k must be >= 1");
    if (per_cluster < 1) throw ConfigError("cluster_and_sample: per_cluster must be >= 1");
    if (static_cast<int>(records.size()) < k)
        throw ConfigError("cluster_and_sample: fewer records than clusters");

    std::vector<detail::Feature> pts;
    pts.reserve(records.size());
    for (const auto& r : records) pts.push_back({r.si, r.cf, r.mos});
    const auto km = detail::kmeans(detail::znormalize(std::move(pts)), k, seed);
    for (size_t i = 0; i < records.size(); ++i) records[i].cluster = km.assignment[i];

    auto rng = make_rng(seed, 0x5A3Eu);
    std::vector<DatasetRecord> out;
    for (int c = 0; c < k; ++c) {
        std::vector<size_t> members;
        for (size_t i = 0; i < records.size(); ++i)
            if (records[i].cluster == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        const size_t take = std::min<size_t>(per_cluster, members.size());
        for (size_t j = 0; j < take; ++j) out.push_back(records[members[j]]);
    }
    return out;
}

// ---- adversarial dataset generation ----

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
    std::string image_id, attack_id, metric_id, strength;
    std::uint64_t seed = 0;
    fs::path path;           // lossless 8-bit output
    std::string checksum;    // of the stored file
    double score_before = 0.0, score_after = 0.0;
    bool failed = false;
    std::string error;

    std::string key() const { return image_id + "|" + attack_id + "|" + metric_id + "|" + strength; }
};

struct AdversarialManifest {
    int version = kManifestVersion;
    std::vector<ManifestEntry> entries;
};

inline nlohmann::json to_json(const AdversarialManifest& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : m.entries)
        arr.push_back({{"image_id", e.image_id},
                       {"attack_id", e.attack_id},
                       {"metric_id", e.metric_id},
                       {"strength", e.strength},
                       {"seed", e.seed},
                       {"path", e.path.string()},
                       {"checksum", e.checksum},
                       {"score_before", e.score_before},
                       {"score_after", e.score_after},
                       {"failed", e.failed},
                       {"error", e.error}});
    return {{"version", m.version}, {"entries", std::move(arr)}};
}

inline AdversarialManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("version", -1) != kManifestVersion) throw DatasetError("unsupported manifest version");
    AdversarialManifest m;
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.image_id = je.at("image_id").get<std::string>();
        e.attack_id = je.at("attack_id").get<std::string>();
        e.metric_id = je.at("metric_id").get<std::string>();
        e.strength = je.at("strength").get<std::string>();
        e.seed = je.value("seed", std::uint64_t{0});
        e.path = fs::path(je.value("path", std::string{}));
        e.checksum = je.value("checksum", std::string{});
        e.score_before = je.value("score_before", 0.0);
        e.score_after = je.value("score_after", 0.0);
        e.failed = je.value("failed", false);
        e.error = je.value("error", std::string{});
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void save_manifest(const AdversarialManifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write manifest " + path.string());
    out << to_json(m).dump(2) << "\n";
}

inline AdversarialManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot read manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

/// Checks that every non-failed entry's file exists and matches its checksum.
/// Returns the keys of entries that fail verification.
inline std::vector<std::string> verify_manifest(const AdversarialManifest& m) {
    std::vector<std::string> bad;
    for (const auto& e : m.entries) {
        if (e.failed) continue;
        if (!fs::exists(e.path) || file_checksum(e.path) != e.checksum) bad.push_back(e.key());
    }
    return bad;
}

/// Runs every (image x attack x metric x strength), storing adversarial images
/// losslessly and recording scores. Resumable: entries whose files verify are
/// skipped; capability mismatches are recorded as failed entries.
inline AdversarialManifest generate_adversarial_dataset(const std::vector<DatasetRecord>& selected,
                                                        const std::vector<MetricModel>& metrics,
                                                        const std::map<std::string, StrengthPresets>& presets,
                                                        const std::vector<std::string>& strengths,
                                                        std::uint64_t seed, const fs::path& out_dir,
                                                        const fs::path& manifest_path) {
    fs::create_directories(out_dir);
    std::map<std::string, ManifestEntry> done;
    if (fs::exists(manifest_path))
        for (auto& e : load_manifest(manifest_path).entries) done.emplace(e.key(), std::move(e));

    AdversarialManifest manifest;
    for (const auto& rec : selected) {
        Image src;
        bool src_loaded = false;
        for (const auto& [attack_id, preset] : presets)
            for (const auto& m : metrics)
                for (const auto& strength : strengths) {
                    ManifestEntry e;
                    e.image_id = rec.image_id;
                    e.attack_id = attack_id;
                    e.metric_id = m.identifier;
                    e.strength = strength;
                    e.seed = mix_seed(seed, std::hash<std::string>{}(e.key()));

                    const auto it = done.find(e.key());
                    if (it != done.end() && !it->second.failed && fs::exists(it->second.path) &&
                        file_checksum(it->second.path) == it->second.checksum) {
                        manifest.entries.push_back(it->second);
                        continue;
                    }
                    if (it != done.end() && it->second.failed) {
                        manifest.entries.push_back(it->second);
                        continue;
                    }
                    try {
                        if (!src_loaded) {
                            src = load_image(rec.path);
                            src_loaded = true;
                        }
                        AttackSpec spec = preset_for_strength(preset, strength);
                        spec.seed = e.seed;
                        const AttackResult r = run_attack(spec, m, src);
                        e.path = out_dir / (rec.image_id + "_" + attack_id + "_" + m.identifier + "_" + strength +
                                            ".png");
                        save_png(r.adversarial, e.path);
                        e.checksum = file_checksum(e.path);
                        e.score_before = r.score_before;
                        e.score_after = r.score_after;
                    } catch (const std::exception& ex) {
                        e.failed = true;
                        e.error = ex.what();
                    }
                    manifest.entries.push_back(std::move(e));
                    save_manifest(manifest, manifest_path);  // persist progress per entry
                }
    }
    save_manifest(manifest, manifest_path);
    return manifest;
}

}  // namespace iqabench
