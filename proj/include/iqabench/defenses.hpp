#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "iqabench/adapters.hpp"
#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/resample.hpp"
#include "iqabench/rng.hpp"

namespace iqabench {

enum class DefenseName {
    None,  // "W/o Defense" baseline row
    Jpeg,
    DiffJpeg,
    ColorQuant,
    Resize,
    BilinearUpscale,
    Rotate,
    Crop,
    Flip,
    GaussianBlur,
    MedianBlur,
    Unsharp,
    RandomNoise,
    External,
};

inline std::string to_string(DefenseName n) {
    switch (n) {
        case DefenseName::None: return "none";
        case DefenseName::Jpeg: return "jpeg";
        case DefenseName::DiffJpeg: return "diffjpeg";
        case DefenseName::ColorQuant: return "color_quant";
        case DefenseName::Resize: return "resize";
        case DefenseName::BilinearUpscale: return "bilinear_upscale";
        case DefenseName::Rotate: return "rotate";
        case DefenseName::Crop: return "crop";
        case DefenseName::Flip: return "flip";
        case DefenseName::GaussianBlur: return "gaussian_blur";
        case DefenseName::MedianBlur: return "median_blur";
        case DefenseName::Unsharp: return "unsharp";
        case DefenseName::RandomNoise: return "random_noise";
        case DefenseName::External: return "external";
    }
    return "?";
}

inline DefenseName defense_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(DefenseName::External); ++i)
        if (to_string(static_cast<DefenseName>(i)) == s) return static_cast<DefenseName>(i);
    throw ConfigError("unknown defense name: " + s);
}

struct DefenseSpec {
    DefenseName name = DefenseName::None;
    double param = 0.0;  // the varied parameter, defense-native units
    std::uint64_t seed = 0;
    std::shared_ptr<PurifierFn> external;  // set when name == External
    std::string external_id;

    bool differentiable() const {
        switch (name) {
            case DefenseName::None:
            case DefenseName::DiffJpeg:
            case DefenseName::Resize:
            case DefenseName::BilinearUpscale:
            case DefenseName::Rotate:
            case DefenseName::Crop:
            case DefenseName::Flip:
            case DefenseName::GaussianBlur:
            case DefenseName::Unsharp:
            case DefenseName::RandomNoise:
                return true;
            default:
                return false;
        }
    }

    bool stochastic() const {
        return name == DefenseName::Rotate || name == DefenseName::Crop || name == DefenseName::RandomNoise;
    }

    std::string id() const {
        if (name == DefenseName::External) return "external:" + external_id;
        if (name == DefenseName::None || name == DefenseName::Flip) return to_string(name);
        std::string p = std::to_string(param);
        p.erase(p.find_last_not_of('0') + 1);
        if (!p.empty() && p.back() == '.') p.pop_back();
        return to_string(name) + ":" + p;
    }
};

// ---- compression defenses ----

inline Image jpeg_defend(const Image& x, int q) { return jpeg_roundtrip(x, q); }

namespace detail {

inline const std::array<std::array<double, 8>, 8>& dct_matrix() {
    static const auto D = [] {
        std::array<std::array<double, 8>, 8> d{};
        for (int k = 0; k < 8; ++k)
            for (int n = 0; n < 8; ++n)
                d[k][n] = (k == 0 ? std::sqrt(1.0 / 8) : 0.5) * std::cos(M_PI * (2 * n + 1) * k / 16.0);
        return d;
    }();
    return D;
}

inline std::array<int, 64> scaled_quant_table(const int* base, int q) {
    const int s = q < 50 ? 5000 / q : 200 - 2 * q;
    std::array<int, 64> t{};
    for (int i = 0; i < 64; ++i) t[i] = std::clamp((base[i] * s + 50) / 100, 1, 255);
    return t;
}

inline const int kLumaQuant[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                   14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                   18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                   49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
inline const int kChromaQuant[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                     24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                     99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                     99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// smooth surrogate for rounding: identity minus one sine period
inline double soft_round(double v) { return v - std::sin(2 * M_PI * v) / (2 * M_PI); }
inline double soft_round_deriv(double v) { return 1.0 - std::cos(2 * M_PI * v); }

struct DiffJpegCapture {
    int ph = 0, pw = 0;                 // padded dims
    std::vector<double> round_deriv;    // 3 * ph * pw, r'(C/Q) per coefficient
    std::vector<unsigned char> clip_on; // 3 * h * w, 1 where output was clipped
};

inline void rgb_to_ycbcr(double r, double g, double b, double& y, double& cb, double& cr) {
    y = 0.299 * r + 0.587 * g + 0.114 * b;
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
}
inline void ycbcr_to_rgb(double y, double cb, double cr, double& r, double& g, double& b) {
    r = y + 1.402 * (cr - 128.0);
    g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
    b = y + 1.772 * (cb - 128.0);
}

inline Image diffjpeg_forward(const Image& x, int q, DiffJpegCapture* cap) {
    if (q < 1 || q > 100) throw ConfigError("diffjpeg quality out of [1,100]");
    const int h = x.height, w = x.width;
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
    const auto& D = dct_matrix();
    const auto ql = scaled_quant_table(kLumaQuant, q);
    const auto qc = scaled_quant_table(kChromaQuant, q);

    // pad (edge replicate) and convert to YCbCr in 0..255
    std::vector<double> plane(static_cast<size_t>(3) * ph * pw);
    auto P = [&](int c, int y, int xx) -> double& { return plane[(static_cast<size_t>(c) * ph + y) * pw + xx]; };
    for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx) {
            const int sy = std::min(y, h - 1), sx = std::min(xx, w - 1);
            double yy, cb, cr;
            rgb_to_ycbcr(255.0 * x.at(0, sy, sx), 255.0 * x.at(1, sy, sx), 255.0 * x.at(2, sy, sx), yy, cb, cr);
            P(0, y, xx) = yy;
            P(1, y, xx) = cb;
            P(2, y, xx) = cr;
        }

    if (cap) {
        cap->ph = ph;
        cap->pw = pw;
        cap->round_deriv.assign(plane.size(), 0.0);
        cap->clip_on.assign(static_cast<size_t>(3) * h * w, 0);
    }

    double blk[8][8], tmp[8][8];
    for (int c = 0; c < 3; ++c) {
        const auto& qt = (c == 0) ? ql : qc;
        for (int by = 0; by < ph; by += 8)
            for (int bx = 0; bx < pw; bx += 8) {
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) blk[i][j] = P(c, by + i, bx + j) - 128.0;
                // C = D * blk * D^T
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += D[i][n] * blk[n][j];
                        tmp[i][j] = s;
                    }
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += tmp[i][n] * D[j][n];
                        const double qv = qt[i * 8 + j];
                        const double v = s / qv;
                        blk[i][j] = soft_round(v) * qv;
                        if (cap) cap->round_deriv[(static_cast<size_t>(c) * ph + by + i) * pw + bx + j] = soft_round_deriv(v);
                    }
                // X = D^T * C * D
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += D[n][i] * blk[n][j];
                        tmp[i][j] = s;
                    }
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += tmp[i][n] * D[n][j];
                        P(c, by + i, bx + j) = s + 128.0;
                    }
            }
    }

    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            double r, g, b;
            ycbcr_to_rgb(P(0, y, xx), P(1, y, xx), P(2, y, xx), r, g, b);
            const double vals[3] = {r / 255.0, g / 255.0, b / 255.0};
            for (int c = 0; c < 3; ++c) {
                if (cap && (vals[c] < 0.0 || vals[c] > 1.0))
                    cap->clip_on[(static_cast<size_t>(c) * h + y) * w + xx] = 1;
                out.at(c, y, xx) = static_cast<float>(std::clamp(vals[c], 0.0, 1.0));
            }
        }
    return out;
}

inline Field diffjpeg_vjp(const Image& x, int q, const Field& gbar) {
    DiffJpegCapture cap;
    diffjpeg_forward(x, q, &cap);
    const int h = x.height, w = x.width, ph = cap.ph, pw = cap.pw;
    const auto& D = dct_matrix();

    // clip mask, then inverse color transform adjoint, scattered onto padded grid
    std::vector<double> plane(static_cast<size_t>(3) * ph * pw, 0.0);
    auto P = [&](int c, int y, int xx) -> double& { return plane[(static_cast<size_t>(c) * ph + y) * pw + xx]; };
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            double gr = gbar.at(0, y, xx), gg = gbar.at(1, y, xx), gb = gbar.at(2, y, xx);
            if (cap.clip_on[(static_cast<size_t>(0) * h + y) * w + xx]) gr = 0;
            if (cap.clip_on[(static_cast<size_t>(1) * h + y) * w + xx]) gg = 0;
            if (cap.clip_on[(static_cast<size_t>(2) * h + y) * w + xx]) gb = 0;
            // adjoint of ycbcr_to_rgb (transpose of its linear part)
            P(0, y, xx) = gr + gg + gb;
            P(1, y, xx) = -0.344136 * gg + 1.772 * gb;
            P(2, y, xx) = 1.402 * gr - 0.714136 * gg;
        }

    double blk[8][8], tmp[8][8];
    for (int c = 0; c < 3; ++c)
        for (int by = 0; by < ph; by += 8)
            for (int bx = 0; bx < pw; bx += 8) {
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) blk[i][j] = P(c, by + i, bx + j);
                // adjoint of IDCT = forward DCT
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += D[i][n] * blk[n][j];
                        tmp[i][j] = s;
                    }
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += tmp[i][n] * D[j][n];
                        blk[i][j] = s * cap.round_deriv[(static_cast<size_t>(c) * ph + by + i) * pw + bx + j];
                    }
                // adjoint of DCT = IDCT
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += D[n][i] * blk[n][j];
                        tmp[i][j] = s;
                    }
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        double s = 0;
                        for (int n = 0; n < 8; ++n) s += tmp[i][n] * D[n][j];
                        P(c, by + i, bx + j) = s;
                    }
            }

    // adjoint of padding (fold replicated cells back) + forward color transform
    Field gin(3, h, w);
    std::vector<double> acc(static_cast<size_t>(3) * h * w, 0.0);
    for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx) {
            const int sy = std::min(y, h - 1), sx = std::min(xx, w - 1);
            const double gy = P(0, y, xx), gcb = P(1, y, xx), gcr = P(2, y, xx);
            // adjoint of rgb_to_ycbcr (transpose), 255 scales cancel with 1/255
            acc[(static_cast<size_t>(0) * h + sy) * w + sx] += 0.299 * gy - 0.168736 * gcb + 0.5 * gcr;
            acc[(static_cast<size_t>(1) * h + sy) * w + sx] += 0.587 * gy - 0.331264 * gcb - 0.418688 * gcr;
            acc[(static_cast<size_t>(2) * h + sy) * w + sx] += 0.114 * gy + 0.5 * gcb - 0.081312 * gcr;
        }
    for (size_t i = 0; i < acc.size(); ++i) gin.data[i] = static_cast<float>(acc[i]);
    return gin;
}

}  // namespace detail

inline Image diffjpeg_defend(const Image& x, int q) { return detail::diffjpeg_forward(x, q, nullptr); }

inline Image color_quantize(const Image& x, int npp) {
    if (npp < 2 || npp > 256) throw ConfigError("color quantization levels out of [2,256]");
    Image out = x;
    const double levels = npp - 1;
    for (auto& v : out.data) {
        // nearest lattice level, exact ties round down
        const double k = std::ceil(double(v) * levels - 0.5);
        v = static_cast<float>(std::clamp(k, 0.0, levels) / levels);
    }
    return out;
}

// ---- geometric defenses ----

inline Image flip_horizontal(const Image& x) {
    Image out(x.height, x.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < x.height; ++y)
            for (int j = 0; j < x.width; ++j) out.at(c, y, j) = x.at(c, y, x.width - 1 - j);
    return out;
}

namespace detail {

inline Image apply_two_plans(const Image& x, const ResamplePlan& p1, const ResamplePlan& p2) {
    Field mid(3, p1.out_h, p1.out_w);
    p1.apply(x, mid, 3);
    Image out(p2.out_h, p2.out_w);
    p2.apply(mid, out, 3);
    return out;
}

inline void resize_plans(int h, int w, double scale, ResamplePlan& p1, ResamplePlan& p2) {
    if (scale <= 0) throw ConfigError("resize scale must be positive");
    const int rh = std::max(1, static_cast<int>(std::lround(h * scale)));
    const int rw = std::max(1, static_cast<int>(std::lround(w * scale)));
    p1 = scale_plan(h, w, rh, rw);
    p2 = scale_plan(rh, rw, h, w);
}

inline double sample_rotation_angle(double angle_limit, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x607A7Eu);
    std::uniform_real_distribution<double> uni(-angle_limit, angle_limit);
    return uni(rng);
}

inline ResamplePlan seeded_crop_plan(int h, int w, int size, std::uint64_t seed) {
    if (size < 1 || size > std::min(h, w)) throw ConfigError("crop size out of range");
    auto rng = make_rng(seed, 0xC407u);
    std::uniform_int_distribution<int> dt(0, h - size), dl(0, w - size);
    const int top = dt(rng), left = dl(rng);
    return crop_plan(h, w, top, left, size);
}

}  // namespace detail

inline Image geometric_defend(const Image& x, DefenseName kind, double param, std::uint64_t seed) {
    switch (kind) {
        case DefenseName::Resize:
        case DefenseName::BilinearUpscale: {
            ResamplePlan p1, p2;
            detail::resize_plans(x.height, x.width, param, p1, p2);
            return detail::apply_two_plans(x, p1, p2);
        }
        case DefenseName::Rotate: {
            if (param < 0) throw ConfigError("rotation angle limit must be >= 0");
            const double angle = detail::sample_rotation_angle(param, seed);
            const ResamplePlan p = rotate_plan(x.height, x.width, angle);
            Image out(x.height, x.width);
            p.apply(x, out, 3);
            return out;
        }
        case DefenseName::Crop: {
            const ResamplePlan p = detail::seeded_crop_plan(x.height, x.width, static_cast<int>(param), seed);
            Image out(x.height, x.width);
            p.apply(x, out, 3);
            return out;
        }
        case DefenseName::Flip:
            return flip_horizontal(x);
        default:
            throw ConfigError("geometric_defend: not a geometric defense");
    }
}

// ---- filters ----

namespace detail {
inline double gaussian_sigma_for_kernel(int k) { return 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8; }
}

inline Image gaussian_blur_defend(const Image& x, int k) {
    if (k % 2 == 0 || k < 1) throw ConfigError("kernel size must be odd and >= 1");
    if (k == 1) return x;
    const auto kern = gaussian_kernel_1d(k, detail::gaussian_sigma_for_kernel(k));
    Image out = x;
    Field in(3, x.height, x.width);
    in.data.assign(x.data.begin(), x.data.end());
    const Field f = separable_filter(in, kern, 3);
    out.data.assign(f.data.begin(), f.data.end());
    return out;
}

inline Image median_blur_defend(const Image& x, int k) {
    if (k % 2 == 0 || k < 1) throw ConfigError("kernel size must be odd and >= 1");
    if (k == 1) return x;
    const int r = k / 2;
    Image out(x.height, x.width);
    std::vector<float> window;
    window.reserve(static_cast<size_t>(k) * k);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < x.height; ++y)
            for (int j = 0; j < x.width; ++j) {
                window.clear();
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx)
                        window.push_back(x.at(c, reflect_index(y + dy, x.height), reflect_index(j + dx, x.width)));
                auto mid = window.begin() + window.size() / 2;
                std::nth_element(window.begin(), mid, window.end());
                out.at(c, y, j) = *mid;
            }
    return out;
}

inline Image unsharp_defend(const Image& x, int k) {
    if (k % 2 == 0 || k < 1) throw ConfigError("kernel size must be odd and >= 1");
    const Image blurred = k == 1 ? x : gaussian_blur_defend(x, k);
    Image out = x;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(2.0f * x.data[i] - blurred.data[i], 0.0f, 1.0f);  // amount = 1.0
    return out;
}

inline Image random_noise_defend(const Image& x, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw ConfigError("noise sigma must be >= 0");
    Image out = x;
    if (sigma == 0) return out;
    auto rng = make_rng(seed, 0x4015Eu);
    std::normal_distribution<float> nd(0.0f, static_cast<float>(sigma));
    for (auto& v : out.data) v = std::clamp(v + nd(rng), 0.0f, 1.0f);
    return out;
}

// ---- dispatch ----

inline Image purify(const DefenseSpec& spec, const Image& x) {
    switch (spec.name) {
        case DefenseName::None: return x;
        case DefenseName::Jpeg: return jpeg_defend(x, static_cast<int>(spec.param));
        case DefenseName::DiffJpeg: return diffjpeg_defend(x, static_cast<int>(spec.param));
        case DefenseName::ColorQuant: return color_quantize(x, static_cast<int>(spec.param));
        case DefenseName::Resize:
        case DefenseName::BilinearUpscale:
        case DefenseName::Rotate:
        case DefenseName::Crop:
        case DefenseName::Flip:
            return geometric_defend(x, spec.name, spec.param, spec.seed);
        case DefenseName::GaussianBlur: return gaussian_blur_defend(x, static_cast<int>(spec.param));
        case DefenseName::MedianBlur: return median_blur_defend(x, static_cast<int>(spec.param));
        case DefenseName::Unsharp: return unsharp_defend(x, static_cast<int>(spec.param));
        case DefenseName::RandomNoise: return random_noise_defend(x, spec.param, spec.seed);
        case DefenseName::External:
            if (!spec.external || !*spec.external) throw AdapterError("external purifier not bound");
            return (*spec.external)(x);
    }
    throw ConfigError("unknown defense");
}

/// Vector-Jacobian product of purify at x: returns J^T * gbar.
/// Only valid for defenses flagged differentiable.
inline Field purify_vjp(const DefenseSpec& spec, const Image& x, const Field& gbar) {
    if (!spec.differentiable())
        throw CapabilityError("defense '" + to_string(spec.name) + "' is not differentiable");
    const int h = x.height, w = x.width;
    switch (spec.name) {
        case DefenseName::None:
            return gbar;
        case DefenseName::Flip: {
            Field g(3, h, w);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int j = 0; j < w; ++j) g.at(c, y, j) = gbar.at(c, y, w - 1 - j);
            return g;
        }
        case DefenseName::DiffJpeg:
            return detail::diffjpeg_vjp(x, static_cast<int>(spec.param), gbar);
        case DefenseName::Resize:
        case DefenseName::BilinearUpscale: {
            ResamplePlan p1, p2;
            detail::resize_plans(h, w, spec.param, p1, p2);
            Field gm(3, p1.out_h, p1.out_w);
            p2.adjoint(gbar, gm, 3);
            Field g(3, h, w);
            p1.adjoint(gm, g, 3);
            return g;
        }
        case DefenseName::Rotate: {
            const double angle = detail::sample_rotation_angle(spec.param, spec.seed);
            const ResamplePlan p = rotate_plan(h, w, angle);
            Field g(3, h, w);
            p.adjoint(gbar, g, 3);
            return g;
        }
        case DefenseName::Crop: {
            const ResamplePlan p = detail::seeded_crop_plan(h, w, static_cast<int>(spec.param), spec.seed);
            Field g(3, h, w);
            p.adjoint(gbar, g, 3);
            return g;
        }
        case DefenseName::GaussianBlur: {
            const int k = static_cast<int>(spec.param);
            if (k == 1) return gbar;
            const auto kern = gaussian_kernel_1d(k, detail::gaussian_sigma_for_kernel(k));
            return separable_filter_adjoint(gbar, kern, 3);
        }
        case DefenseName::Unsharp: {
            const int k = static_cast<int>(spec.param);
            if (k == 1) return gbar;
            const Image blurred = gaussian_blur_defend(x, k);
            Field masked = gbar;
            for (size_t i = 0; i < masked.data.size(); ++i) {
                const float pre = 2.0f * x.data[i] - blurred.data[i];
                if (pre <= 0.0f || pre >= 1.0f) masked.data[i] = 0.0f;
            }
            const auto kern = gaussian_kernel_1d(k, detail::gaussian_sigma_for_kernel(k));
            const Field gb = separable_filter_adjoint(masked, kern, 3);
            Field g = masked;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = 2.0f * masked.data[i] - gb.data[i];
            return g;
        }
        case DefenseName::RandomNoise: {
            if (spec.param == 0) return gbar;
            auto rng = make_rng(spec.seed, 0x4015Eu);
            std::normal_distribution<float> nd(0.0f, static_cast<float>(spec.param));
            Field g = gbar;
            for (size_t i = 0; i < g.data.size(); ++i) {
                const float noisy = x.data[i] + nd(rng);
                if (noisy <= 0.0f || noisy >= 1.0f) g.data[i] = 0.0f;
            }
            return g;
        }
        default:
            throw CapabilityError("no vjp for defense " + to_string(spec.name));
    }
}

/// Composes metric and defense into the adaptive-attack target g = f(P(x)).
/// Stochastic defenses keep the spec's fixed seed across gradient queries.
inline MetricModel compose_defended_metric(const MetricModel& m, const DefenseSpec& spec) {
    if (!spec.differentiable())
        throw ConfigError("adaptive case requires a differentiable defense, got '" + to_string(spec.name) + "'");
    MetricModel g;
    g.identifier = m.identifier + "+" + spec.id();
    g.range_low = m.range_low;
    g.range_high = m.range_high;
    g.range_estimated = m.range_estimated;
    g.score_fn = [m, spec](const Image& x) { return score(m, purify(spec, x)); };
    if (m.gradient_capable())
        g.grad_fn = [m, spec](const Image& x) {
            const Image px = purify(spec, x);
            const GradientField gf = gradient(m, px);
            return purify_vjp(spec, x, gf);
        };
    return g;
}

inline DefenseSpec register_external_purifier(const std::string& identifier, PurifierFn fn) {
    DefenseSpec spec;
    spec.name = DefenseName::External;
    spec.external = std::make_shared<PurifierFn>(std::move(fn));
    spec.external_id = identifier;
    return spec;
}

}  // namespace iqabench
