#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "iqabench/rng.hpp"

namespace iqabench {

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Generic float raster (channels x height x width, planar). Carries no value
/// constraints; used for gradients, perturbations and intermediate math.
struct Field {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Field() = default;
    Field(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0f) {}

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return data.size(); }
};

/// RGB image, planar CHW, values clamped to [0,1]. Minimum size 8x8.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // 3 * height * width

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {
        check_dims(h, w);
    }

    static void check_dims(int h, int w) {
        if (h < 8 || w < 8) throw ImageError("image dimensions must be at least 8x8");
    }

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return data.size(); }

    void clamp01() {
        for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
    }
};

inline Image make_image(int h, int w, const std::vector<float>& values) {
    Image img(h, w);
    if (values.size() != img.size()) throw ImageError("pixel buffer size mismatch");
    img.data = values;
    img.clamp01();
    return img;
}

inline Image constant_image(int h, int w, float r, float g, float b) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }
    img.clamp01();
    return img;
}

inline Image random_image(int h, int w, std::uint64_t seed) {
    auto rng = make_rng(seed, 0xA11CEu);
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    Image img(h, w);
    for (auto& v : img.data) v = uni(rng);
    return img;
}

inline void require_same_shape(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width) throw ImageError("image shape mismatch");
}

inline double linf_distance(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - b.data[i]));
    return m;
}

inline double l2_distance(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline int l0_pixel_support(const Image& a, const Image& b, float tol = 0.0f) {
    require_same_shape(a, b);
    int n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            bool differs = false;
            for (int c = 0; c < 3; ++c)
                if (std::abs(a.at(c, y, x) - b.at(c, y, x)) > tol) differs = true;
            if (differs) ++n;
        }
    return n;
}

// ---- 8-bit codec I/O (OpenCV imgcodecs) ----

inline cv::Mat to_mat8(const Image& img) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            // OpenCV is BGR.
            row[x][2] = static_cast<uchar>(std::lround(std::clamp(img.at(0, y, x), 0.0f, 1.0f) * 255.0f));
            row[x][1] = static_cast<uchar>(std::lround(std::clamp(img.at(1, y, x), 0.0f, 1.0f) * 255.0f));
            row[x][0] = static_cast<uchar>(std::lround(std::clamp(img.at(2, y, x), 0.0f, 1.0f) * 255.0f));
        }
    }
    return m;
}

inline Image from_mat8(const cv::Mat& m) {
    if (m.empty() || m.type() != CV_8UC3) throw ImageError("expected 8-bit 3-channel image");
    Image img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            img.at(0, y, x) = row[x][2] / 255.0f;
            img.at(1, y, x) = row[x][1] / 255.0f;
            img.at(2, y, x) = row[x][0] / 255.0f;
        }
    }
    return img;
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    if (!cv::imwrite(path.string(), to_mat8(img))) throw ImageError("failed to write " + path.string());
}

inline Image load_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw ImageError("failed to read " + path.string());
    return from_mat8(m);
}

inline Image jpeg_roundtrip(const Image& img, int quality) {
    if (quality < 1 || quality > 100) throw ImageError("jpeg quality out of [1,100]");
    std::vector<uchar> buf;
    std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
    if (!cv::imencode(".jpg", to_mat8(img), buf, params)) throw ImageError("jpeg encode failed");
    cv::Mat dec = cv::imdecode(buf, cv::IMREAD_COLOR);
    return from_mat8(dec);
}

/// FNV-1a over file bytes; used for manifest integrity checks.
inline std::string file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace iqabench
