#pragma once

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"

namespace iqabench {

namespace fs = std::filesystem;

inline fs::path unique_temp_path(const std::string& stem, const std::string& ext) {
    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream name;
    name << "iqabench-" << stem << "-" << ::getpid() << "-" << counter++ << ext;
    return fs::temp_directory_path() / name.str();
}

/// Runs a shell command capturing stdout+stderr. Throws AdapterError on
/// nonzero exit, with the captured output as diagnostics.
inline std::string run_endpoint_command(const std::string& command) {
    const std::string cmd = command + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw AdapterError("failed to launch endpoint: " + command);
    std::string out;
    std::array<char, 4096> buf;
    while (size_t n = ::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    if (status != 0) throw AdapterError("endpoint exited with status " + std::to_string(status) + ": " + command +
                                        "\noutput: " + out);
    return out;
}

inline std::string substitute_placeholder(std::string s, const std::string& key, const std::string& value) {
    for (size_t pos; (pos = s.find(key)) != std::string::npos;) s.replace(pos, key.size(), value);
    return s;
}

/// Descriptor for an external scoring endpoint: a command consuming a lossless
/// 8-bit image file and printing one decimal score per line.
struct MetricAdapterDescriptor {
    std::string identifier;
    std::optional<double> range_low, range_high;
    bool gradient_capable = false;
    std::string command;  // with {input} placeholder

    static MetricAdapterDescriptor from_json(const nlohmann::json& j) {
        MetricAdapterDescriptor d;
        d.identifier = j.value("identifier", "");
        if (d.identifier.empty()) throw ConfigError("metric descriptor: missing identifier");
        if (j.contains("range_low")) d.range_low = j.at("range_low").get<double>();
        if (j.contains("range_high")) d.range_high = j.at("range_high").get<double>();
        d.gradient_capable = j.value("gradient_capable", false);
        d.command = j.value("command", "");
        return d;
    }
};

/// Scoring endpoint abstraction: image file path in, score out.
using FileScoringEndpoint = std::function<double(const fs::path&)>;

inline double parse_first_score(const std::string& output, const std::string& id) {
    std::istringstream in(output);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            size_t consumed = 0;
            const double v = std::stod(line, &consumed);
            if (consumed == 0) throw std::invalid_argument("empty");
            return v;
        } catch (const std::exception&) {
            throw AdapterError("metric '" + id + "': endpoint returned non-numeric output: " + line);
        }
    }
    throw AdapterError("metric '" + id + "': endpoint produced no output");
}

inline FileScoringEndpoint make_process_scoring_endpoint(const std::string& command, const std::string& id) {
    return [command, id](const fs::path& image_path) {
        const std::string cmd = substitute_placeholder(command, "{input}", image_path.string());
        return parse_first_score(run_endpoint_command(cmd), id);
    };
}

inline MetricModel register_external_metric(const MetricAdapterDescriptor& d, FileScoringEndpoint endpoint) {
    if (!d.range_low || !d.range_high) throw ConfigError("metric '" + d.identifier + "': descriptor missing range");
    MetricModel m;
    m.identifier = d.identifier;
    m.range_low = *d.range_low;
    m.range_high = *d.range_high;
    if (!(m.range_high > m.range_low)) throw ConfigError("metric '" + d.identifier + "': invalid range");
    m.score_fn = [endpoint, id = d.identifier](const Image& x) {
        const fs::path tmp = unique_temp_path("metric-in", ".png");
        save_png(x, tmp);
        double s;
        try {
            s = endpoint(tmp);
        } catch (...) {
            fs::remove(tmp);
            throw;
        }
        fs::remove(tmp);
        return s;
    };
    return m;
}

inline MetricModel register_external_metric(const MetricAdapterDescriptor& d) {
    if (d.command.empty()) throw ConfigError("metric '" + d.identifier + "': descriptor missing command");
    return register_external_metric(d, make_process_scoring_endpoint(d.command, d.identifier));
}

// ---- external purifier ----

using PurifierFn = std::function<Image(const Image&)>;

/// Wraps a command with {input}/{output} placeholders into an image transform.
/// Output must decode to the input shape.
inline PurifierFn make_process_purifier(const std::string& command, const std::string& id) {
    return [command, id](const Image& x) {
        const fs::path in = unique_temp_path("purify-in", ".png");
        const fs::path out = unique_temp_path("purify-out", ".png");
        save_png(x, in);
        Image result;
        try {
            std::string cmd = substitute_placeholder(command, "{input}", in.string());
            cmd = substitute_placeholder(cmd, "{output}", out.string());
            run_endpoint_command(cmd);
            if (!fs::exists(out)) throw AdapterError("purifier '" + id + "': endpoint produced no output file");
            result = load_image(out);
        } catch (...) {
            fs::remove(in);
            fs::remove(out);
            throw;
        }
        fs::remove(in);
        fs::remove(out);
        if (result.height != x.height || result.width != x.width)
            throw AdapterError("purifier '" + id + "': endpoint output shape mismatch");
        return result;
    };
}

}  // namespace iqabench
