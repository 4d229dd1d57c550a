#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iqabench/metric.hpp"
#include "iqabench/quality.hpp"

namespace iqabench {

struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One (metric, attack, defense, image, strength) measurement.
/// score_def_adv = f(P(x')), score_def_clean = f(P(x)), score_source = f(x).
struct EvaluationRecord {
    std::string metric_id, attack_id, defense_id, image_id, strength;
    double score_source = 0.0, score_adv = 0.0, score_def_adv = 0.0, score_def_clean = 0.0;
    double q_ssim = 0.0, q_psnr = 0.0;  // of (defended adversarial, source)
    double diam = 1.0;                  // metric range width the scores live in
    double wall_time_ms = 0.0;          // defense application only
    std::uint64_t seed = 0;

    void validate() const {
        for (double v : {score_source, score_adv, score_def_adv, score_def_clean, q_ssim, q_psnr, diam})
            if (!std::isfinite(v)) throw EvaluationError("record has a non-finite value");
        if (wall_time_ms < 0) throw EvaluationError("record has negative wall time");
        if (!(diam > 0)) throw EvaluationError("record has non-positive diam");
    }
};

namespace detail {
inline void require_records(const std::vector<EvaluationRecord>& rs, const char* op) {
    if (rs.empty()) throw EvaluationError(std::string(op) + ": empty record set");
}
}  // namespace detail

/// Mean |f(P(x')) - f(x)| / diam * 100 — attack efficiency that survives the defense.
inline double d_score(const std::vector<EvaluationRecord>& rs) {
    detail::require_records(rs, "d_score");
    double acc = 0;
    for (const auto& r : rs) acc += std::abs(r.score_def_adv - r.score_source) / r.diam;
    return 100.0 * acc / rs.size();
}

/// Mean |f(P(x')) - f(P(x))| / diam * 100 — the variant referenced to purified sources.
inline double d_score_defended(const std::vector<EvaluationRecord>& rs) {
    detail::require_records(rs, "d_score_defended");
    double acc = 0;
    for (const auto& r : rs) acc += std::abs(r.score_def_adv - r.score_def_clean) / r.diam;
    return 100.0 * acc / rs.size();
}

/// Mean SSIM + PSNR/40 of defended adversarial images against their sources.
inline double q_score(const std::vector<EvaluationRecord>& rs) {
    detail::require_records(rs, "q_score");
    double acc = 0;
    for (const auto& r : rs) acc += r.q_ssim + r.q_psnr / kPsnrCeiling;
    return acc / rs.size();
}

inline double srocc_clear(const std::vector<double>& mos, const std::vector<double>& defended_clean_scores) {
    return srocc(mos, defended_clean_scores);
}

inline double srocc_adv(const std::vector<double>& mos, const std::vector<double>& defended_adv_scores) {
    return srocc(mos, defended_adv_scores);
}

/// Per (defense, strength) aggregate. Dispersion is the population standard
/// deviation across attack x metric cell means.
struct AggregateRow {
    std::string defense_id, strength;
    double d_mean = 0, d_disp = 0;
    double dd_mean = 0, dd_disp = 0;
    double q_mean = 0, q_disp = 0;
    double mean_time_ms = 0;
    int cells = 0;
    long records = 0;
};

inline std::vector<AggregateRow> aggregate(const std::vector<EvaluationRecord>& rs) {
    detail::require_records(rs, "aggregate");
    struct Cell {
        std::vector<EvaluationRecord> records;
    };
    // group -> cell key (attack x metric) -> records
    std::map<std::pair<std::string, std::string>, std::map<std::pair<std::string, std::string>, Cell>> groups;
    for (const auto& r : rs) {
        r.validate();
        groups[{r.defense_id, r.strength}][{r.attack_id, r.metric_id}].records.push_back(r);
    }
    auto mean_disp = [](const std::vector<double>& v, double& mean, double& disp) {
        mean = 0;
        for (double x : v) mean += x;
        mean /= v.size();
        double s = 0;
        for (double x : v) s += (x - mean) * (x - mean);
        disp = std::sqrt(s / v.size());
    };
    std::vector<AggregateRow> rows;
    for (const auto& [key, cells] : groups) {
        AggregateRow row;
        row.defense_id = key.first;
        row.strength = key.second;
        std::vector<double> d, dd, q;
        double time_acc = 0;
        long nrec = 0;
        for (const auto& [ck, cell] : cells) {
            d.push_back(d_score(cell.records));
            dd.push_back(d_score_defended(cell.records));
            q.push_back(q_score(cell.records));
            for (const auto& r : cell.records) {
                time_acc += r.wall_time_ms;
                ++nrec;
            }
        }
        mean_disp(d, row.d_mean, row.d_disp);
        mean_disp(dd, row.dd_mean, row.dd_disp);
        mean_disp(q, row.q_mean, row.q_disp);
        row.mean_time_ms = time_acc / nrec;
        row.cells = static_cast<int>(cells.size());
        row.records = nrec;
        rows.push_back(std::move(row));
    }
    return rows;
}

/// One candidate parameterization of a defense with its headline measures.
struct DefenseParamRow {
    std::string defense_family;  // e.g. "jpeg"
    std::string param_id;        // e.g. "jpeg(q=60)"
    double srocc_adv = 0;
    double q_score = 0;
};

/// Per family, keeps the parameter set with the highest SROCC_adv; ties break
/// toward higher Q_score, then the lexicographically smallest param_id so the
/// choice is stable under input shuffling.
inline std::vector<DefenseParamRow> select_best_defense_params(std::vector<DefenseParamRow> rows) {
    std::map<std::string, DefenseParamRow> best;
    for (auto& r : rows) {
        auto it = best.find(r.defense_family);
        if (it == best.end()) {
            best.emplace(r.defense_family, std::move(r));
            continue;
        }
        DefenseParamRow& b = it->second;
        const bool wins = r.srocc_adv > b.srocc_adv ||
                          (r.srocc_adv == b.srocc_adv &&
                           (r.q_score > b.q_score || (r.q_score == b.q_score && r.param_id < b.param_id)));
        if (wins) b = std::move(r);
    }
    std::vector<DefenseParamRow> out;
    for (auto& [_, r] : best) out.push_back(std::move(r));
    return out;
}

// ---- record persistence: append-only delimited files with versioned header ----

inline constexpr const char* kRecordsHeader = "# iqabench-records v1";
inline constexpr const char* kRecordsColumns =
    "metric_id,attack_id,defense_id,image_id,strength,score_source,score_adv,score_def_adv,score_def_clean,"
    "q_ssim,q_psnr,diam,wall_time_ms,seed";

namespace detail {
inline void check_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
        throw EvaluationError("record identifier contains a delimiter: " + s);
}
}  // namespace detail

inline void write_records(const std::filesystem::path& path, const std::vector<EvaluationRecord>& rs,
                          bool append = false) {
    const bool fresh = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw EvaluationError("cannot write records to " + path.string());
    out.precision(17);
    if (fresh) out << kRecordsHeader << "\n" << kRecordsColumns << "\n";
    for (const auto& r : rs) {
        r.validate();
        for (const auto* s : {&r.metric_id, &r.attack_id, &r.defense_id, &r.image_id, &r.strength})
            detail::check_field(*s);
        out << r.metric_id << ',' << r.attack_id << ',' << r.defense_id << ',' << r.image_id << ',' << r.strength
            << ',' << r.score_source << ',' << r.score_adv << ',' << r.score_def_adv << ',' << r.score_def_clean
            << ',' << r.q_ssim << ',' << r.q_psnr << ',' << r.diam << ',' << r.wall_time_ms << ',' << r.seed << "\n";
    }
}

inline std::vector<EvaluationRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EvaluationError("cannot read records from " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kRecordsHeader)
        throw EvaluationError("unsupported records file version in " + path.string());
    if (!std::getline(in, line) || line != kRecordsColumns)
        throw EvaluationError("unexpected records column layout in " + path.string());
    std::vector<EvaluationRecord> rs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tok;
        std::vector<std::string> cols;
        while (std::getline(row, tok, ',')) cols.push_back(tok);
        if (cols.size() != 14) throw EvaluationError("malformed record row: " + line);
        EvaluationRecord r;
        r.metric_id = cols[0];
        r.attack_id = cols[1];
        r.defense_id = cols[2];
        r.image_id = cols[3];
        r.strength = cols[4];
        try {
            r.score_source = std::stod(cols[5]);
            r.score_adv = std::stod(cols[6]);
            r.score_def_adv = std::stod(cols[7]);
            r.score_def_clean = std::stod(cols[8]);
            r.q_ssim = std::stod(cols[9]);
            r.q_psnr = std::stod(cols[10]);
            r.diam = std::stod(cols[11]);
            r.wall_time_ms = std::stod(cols[12]);
            r.seed = std::stoull(cols[13]);
        } catch (const std::exception&) {
            throw EvaluationError("malformed numeric field in record row: " + line);
        }
        r.validate();
        rs.push_back(std::move(r));
    }
    return rs;
}

}  // namespace iqabench
