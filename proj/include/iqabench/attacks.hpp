#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/quality.hpp"
#include "iqabench/rng.hpp"

namespace iqabench {

enum class AttackName { Ifgsm, Uap, Korhonen, Zhang, Madc, Stadv, Nes, Square, OnePixel, PatchRs };

inline std::string to_string(AttackName n) {
    switch (n) {
        case AttackName::Ifgsm: return "ifgsm";
        case AttackName::Uap: return "uap";
        case AttackName::Korhonen: return "korhonen";
        case AttackName::Zhang: return "zhang";
        case AttackName::Madc: return "madc";
        case AttackName::Stadv: return "stadv";
        case AttackName::Nes: return "nes";
        case AttackName::Square: return "square";
        case AttackName::OnePixel: return "onepixel";
        case AttackName::PatchRs: return "patchrs";
    }
    return "?";
}

inline AttackName attack_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(AttackName::PatchRs); ++i)
        if (to_string(static_cast<AttackName>(i)) == s) return static_cast<AttackName>(i);
    throw ConfigError("unknown attack name: " + s);
}

enum class ConstraintType { Linf, L0, Psnr, SsimBudget };

struct AttackSpec {
    AttackName name = AttackName::Ifgsm;
    double varied_param_value = 0.0;
    int steps = 10;
    ConstraintType constraint = ConstraintType::Linf;
    double epsilon = 8.0 / 255;
    std::uint64_t seed = 0;
};

struct AttackResult {
    Image adversarial;
    double score_before = 0.0;
    double score_after = 0.0;
    long queries = 0;
    double perturbation_norm = 0.0;
    std::vector<double> trajectory;  // accepted scores over iterations
};

struct StrengthPresets {
    AttackSpec weak, medium, strong;
    double distortion_weak = 0.0, distortion_medium = 0.0, distortion_strong = 0.0;
    bool monotone_grid = true;  // false: calibration warning, nearest-target still applied
};

struct CalibrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline float sgn(float v) { return v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f); }

inline void project_linf_box(Image& adv, const Image& x, double eps) {
    for (size_t i = 0; i < adv.data.size(); ++i) {
        const float lo = std::max(0.0f, x.data[i] - static_cast<float>(eps));
        const float hi = std::min(1.0f, x.data[i] + static_cast<float>(eps));
        adv.data[i] = std::clamp(adv.data[i], lo, hi);
    }
}

inline AttackResult finish(const MetricModel& m, const Image& x, Image adv, double s_before,
                           std::vector<double> traj, long queries, ConstraintType constraint) {
    AttackResult r;
    r.score_before = s_before;
    r.score_after = score(m, adv);
    switch (constraint) {
        case ConstraintType::Linf: r.perturbation_norm = linf_distance(adv, x); break;
        case ConstraintType::L0: r.perturbation_norm = l0_pixel_support(adv, x); break;
        case ConstraintType::Psnr: r.perturbation_norm = psnr(adv, x); break;
        case ConstraintType::SsimBudget: r.perturbation_norm = 1.0 - ssim(adv, x); break;
    }
    r.adversarial = std::move(adv);
    r.trajectory = std::move(traj);
    r.queries = queries;
    return r;
}

}  // namespace detail

// ---- white-box attacks ----

inline AttackResult attack_ifgsm(const MetricModel& m, const Image& x, double lr, int steps, double eps) {
    if (!m.gradient_capable()) throw CapabilityError("ifgsm requires a gradient-capable metric");
    Image adv = x;
    const double s0 = score(m, x);
    std::vector<double> traj{s0};
    for (int t = 0; t < steps; ++t) {
        const GradientField g = normalized_gradient(m, adv);
        for (size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += static_cast<float>(lr) * detail::sgn(g.data[i]);
        detail::project_linf_box(adv, x, eps);
        traj.push_back(score(m, adv));
    }
    return detail::finish(m, x, std::move(adv), s0, std::move(traj), 0, ConstraintType::Linf);
}

/// Trains one perturbation raster shared across images (sign-SGD, clamped to
/// the amplitude ball every update).
inline Field train_uap(const MetricModel& m, const std::vector<Image>& xs, double amplitude, int epochs,
                       std::uint64_t seed) {
    if (!m.gradient_capable()) throw CapabilityError("uap requires a gradient-capable metric");
    if (xs.empty()) throw ConfigError("uap: empty training set");
    Field p(3, xs.front().height, xs.front().width);
    if (amplitude <= 0) return p;
    const double lr = amplitude / 4.0;
    auto rng = make_rng(seed, 0x0A9u);
    std::vector<size_t> order(xs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t idx : order) {
            Image noisy = xs[idx];
            for (size_t i = 0; i < noisy.data.size(); ++i)
                noisy.data[i] = std::clamp(noisy.data[i] + p.data[i], 0.0f, 1.0f);
            const GradientField g = normalized_gradient(m, noisy);
            for (size_t i = 0; i < p.data.size(); ++i)
                p.data[i] = std::clamp(p.data[i] + static_cast<float>(lr) * detail::sgn(g.data[i]),
                                       -static_cast<float>(amplitude), static_cast<float>(amplitude));
        }
    }
    return p;
}

inline AttackResult apply_uap(const MetricModel& m, const Image& x, const Field& p, double amplitude) {
    Image adv = x;
    const double s0 = score(m, x);
    for (size_t i = 0; i < adv.data.size(); ++i) {
        const float d = std::clamp(p.data[i], -static_cast<float>(amplitude), static_cast<float>(amplitude));
        adv.data[i] = std::clamp(adv.data[i] + d, 0.0f, 1.0f);
    }
    return detail::finish(m, x, std::move(adv), s0, {s0}, 0, ConstraintType::Linf);
}

inline AttackResult attack_korhonen(const MetricModel& m, const Image& x, double lr, int steps, double eps) {
    if (!m.gradient_capable()) throw CapabilityError("korhonen requires a gradient-capable metric");
    // spatial-activity mask from the source image, peak-normalized
    const Field sob = sobel_magnitude(luma_plane(x));
    float peak = 0.0f;
    for (float v : sob.data) peak = std::max(peak, v);
    Field mask(1, x.height, x.width);
    if (peak > 0)
        for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = sob.data[i] / peak;

    Image adv = x;
    const double s0 = score(m, x);
    std::vector<double> traj{s0};
    for (int t = 0; t < steps; ++t) {
        const GradientField g = normalized_gradient(m, adv);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < x.height; ++y)
                for (int j = 0; j < x.width; ++j)
                    adv.at(c, y, j) += static_cast<float>(lr) * detail::sgn(g.at(c, y, j)) * mask.at(0, y, j);
        detail::project_linf_box(adv, x, eps);
        traj.push_back(score(m, adv));
    }
    return detail::finish(m, x, std::move(adv), s0, std::move(traj), 0, ConstraintType::Linf);
}

/// Differentiable full-reference measure: value plus gradient wrt the first image.
struct FrMeasure {
    std::string identifier;
    std::function<double(const Image&, const Image&)> value;
    std::function<Field(const Image&, const Image&)> grad_first;
};

inline FrMeasure make_ssim_fr() {
    FrMeasure fr;
    fr.identifier = "ssim";
    fr.value = [](const Image& a, const Image& b) { return ssim(a, b); };
    fr.grad_first = [](const Image& a, const Image& b) { return ssim_gradient(a, b); };
    return fr;
}

/// Score ascent with a full-reference similarity penalty:
/// maximize normalized_score(x') - lambda_fr * (1 - fr(x', x)).
inline AttackResult attack_zhang(const MetricModel& m, const FrMeasure& fr, const Image& x, double lr, int steps,
                                 double lambda_fr = 1.0) {
    if (!m.gradient_capable()) throw CapabilityError("zhang requires a gradient-capable metric");
    Image adv = x;
    const double s0 = score(m, x);
    std::vector<double> traj{s0};
    for (int t = 0; t < steps; ++t) {
        const GradientField gm = normalized_gradient(m, adv);
        const Field gf = fr.grad_first(adv, x);
        Field d(3, x.height, x.width);
        float dmax = 0.0f;
        for (size_t i = 0; i < d.data.size(); ++i) {
            d.data[i] = gm.data[i] + static_cast<float>(lambda_fr) * gf.data[i];
            dmax = std::max(dmax, std::abs(d.data[i]));
        }
        if (dmax == 0.0f) break;
        for (size_t i = 0; i < adv.data.size(); ++i)
            adv.data[i] = std::clamp(adv.data[i] + static_cast<float>(lr) * d.data[i] / dmax, 0.0f, 1.0f);
        traj.push_back(score(m, adv));
    }
    AttackResult r = detail::finish(m, x, std::move(adv), s0, std::move(traj), 0, ConstraintType::SsimBudget);
    r.perturbation_norm = fr.value(r.adversarial, x);  // reports fr(adv, x)
    return r;
}

/// Removes from g its component along d. Zero d passes g through unchanged.
inline Field project_orthogonal(const Field& g, const Field& d) {
    double gd = 0, dd = 0;
    for (size_t i = 0; i < g.data.size(); ++i) {
        gd += double(g.data[i]) * d.data[i];
        dd += double(d.data[i]) * d.data[i];
    }
    Field out = g;
    if (dd > 0) {
        const double a = gd / dd;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(g.data[i] - a * d.data[i]);
    }
    return out;
}

/// Gradient ascent with each step projected orthogonal to the MSE gradient
/// (x' - x), so MSE growth per step is second order.
inline AttackResult attack_madc(const MetricModel& m, const Image& x, double lr, int steps) {
    if (!m.gradient_capable()) throw CapabilityError("madc requires a gradient-capable metric");
    Image adv = x;
    const double s0 = score(m, x);
    std::vector<double> traj{s0};
    for (int t = 0; t < steps; ++t) {
        const GradientField g = normalized_gradient(m, adv);
        Field d(3, x.height, x.width);
        for (size_t i = 0; i < d.data.size(); ++i) d.data[i] = adv.data[i] - x.data[i];
        Field step = project_orthogonal(g, d);
        float smax = 0.0f;
        for (float v : step.data) smax = std::max(smax, std::abs(v));
        if (smax == 0.0f) break;
        for (size_t i = 0; i < adv.data.size(); ++i)
            adv.data[i] = std::clamp(adv.data[i] + static_cast<float>(lr) * step.data[i] / smax, 0.0f, 1.0f);
        traj.push_back(score(m, adv));
    }
    return detail::finish(m, x, std::move(adv), s0, std::move(traj), 0, ConstraintType::Linf);
}

// ---- spatial flow attack ----

/// Warps x by a per-pixel displacement field (2 planes: dy, dx), bilinear
/// sampling with edge clamping. Zero flow reproduces x bit-exactly.
inline Image stadv_warp(const Image& x, const Field& flow) {
    Image out(x.height, x.width);
    for (int y = 0; y < x.height; ++y)
        for (int j = 0; j < x.width; ++j) {
            const double sy = y + flow.at(0, y, j), sx = j + flow.at(1, y, j);
            const BilinearTap t = bilinear_tap(sy, sx, x.height, x.width, BorderMode::Clamp);
            for (int c = 0; c < 3; ++c) {
                const float v00 = x.at(c, t.y0, t.x0), v01 = x.at(c, t.y0, t.x1);
                const float v10 = x.at(c, t.y1, t.x0), v11 = x.at(c, t.y1, t.x1);
                out.at(c, y, j) = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) + t.wy * ((1 - t.wx) * v10 + t.wx * v11);
            }
        }
    return out;
}

inline AttackResult attack_stadv(const MetricModel& m, const Image& x, double lr, int steps, double flow_reg) {
    if (!m.gradient_capable()) throw CapabilityError("stadv requires a gradient-capable metric");
    const int h = x.height, w = x.width;
    Field flow(2, h, w);
    const double s0 = score(m, x);
    std::vector<double> traj{s0};
    Image adv = x;
    for (int t = 0; t < steps; ++t) {
        const Image warped = stadv_warp(x, flow);
        const GradientField gi = normalized_gradient(m, warped);
        Field gflow(2, h, w);
        for (int y = 0; y < h; ++y)
            for (int j = 0; j < w; ++j) {
                const double sy = y + flow.at(0, y, j), sx = j + flow.at(1, y, j);
                const BilinearTap tp = bilinear_tap(sy, sx, h, w, BorderMode::Clamp);
                double dy_acc = 0, dx_acc = 0;
                for (int c = 0; c < 3; ++c) {
                    const float v00 = x.at(c, tp.y0, tp.x0), v01 = x.at(c, tp.y0, tp.x1);
                    const float v10 = x.at(c, tp.y1, tp.x0), v11 = x.at(c, tp.y1, tp.x1);
                    const double dvdy = (1 - tp.wx) * (v10 - v00) + tp.wx * (v11 - v01);
                    const double dvdx = (1 - tp.wy) * (v01 - v00) + tp.wy * (v11 - v10);
                    dy_acc += gi.at(c, y, j) * dvdy;
                    dx_acc += gi.at(c, y, j) * dvdx;
                }
                gflow.at(0, y, j) = static_cast<float>(dy_acc);
                gflow.at(1, y, j) = static_cast<float>(dx_acc);
            }
        // subtract flow_reg * subgradient of anisotropic total variation
        for (int p = 0; p < 2; ++p)
            for (int y = 0; y < h; ++y)
                for (int j = 0; j < w; ++j) {
                    float tv = 0.0f;
                    if (j + 1 < w) tv += detail::sgn(flow.at(p, y, j) - flow.at(p, y, j + 1));
                    if (j > 0) tv += detail::sgn(flow.at(p, y, j) - flow.at(p, y, j - 1));
                    if (y + 1 < h) tv += detail::sgn(flow.at(p, y, j) - flow.at(p, y + 1, j));
                    if (y > 0) tv += detail::sgn(flow.at(p, y, j) - flow.at(p, y - 1, j));
                    gflow.at(p, y, j) -= static_cast<float>(flow_reg) * tv;
                }
        for (size_t i = 0; i < flow.data.size(); ++i) flow.data[i] += static_cast<float>(lr) * detail::sgn(gflow.data[i]);
        adv = stadv_warp(x, flow);
        traj.push_back(score(m, adv));
    }
    AttackResult r = detail::finish(m, x, std::move(adv), s0, std::move(traj), 0, ConstraintType::SsimBudget);
    double maxdisp = 0;
    for (float v : flow.data) maxdisp = std::max(maxdisp, double(std::abs(v)));
    r.perturbation_norm = maxdisp;  // flow attacks report max displacement (px)
    return r;
}

// ---- black-box attacks ----

namespace detail {
struct CountingScorer {
    const MetricModel* m;
    long count = 0;
    double operator()(const Image& x) {
        ++count;
        return score(*m, x);
    }
};
}  // namespace detail

/// Antithetic-sample NES gradient estimate (unnormalized; used through sign).
inline Field nes_estimate_gradient(const std::function<double(const Image&)>& f, const Image& x, int samples,
                                   double sigma, std::mt19937_64& rng) {
    std::normal_distribution<float> nd(0.0f, 1.0f);
    Field g(3, x.height, x.width);
    Image xp = x;
    for (int s = 0; s < samples; ++s) {
        Field u(3, x.height, x.width);
        for (auto& v : u.data) v = nd(rng);
        for (size_t i = 0; i < xp.data.size(); ++i) xp.data[i] = x.data[i] + static_cast<float>(sigma) * u.data[i];
        const double fp = f(xp);
        for (size_t i = 0; i < xp.data.size(); ++i) xp.data[i] = x.data[i] - static_cast<float>(sigma) * u.data[i];
        const double fm = f(xp);
        const double c = (fp - fm) / (2 * sigma * samples);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += static_cast<float>(c) * u.data[i];
    }
    return g;
}

inline AttackResult attack_nes(const MetricModel& m, const Image& x, double lr, int steps, double eps, int samples,
                               double sigma_est, std::uint64_t seed) {
    if (samples < 1) throw ConfigError("nes: samples must be >= 1");
    detail::CountingScorer f{&m};
    auto scorer = [&f](const Image& img) { return f(img); };
    auto rng = make_rng(seed, 0x4E5u);
    Image adv = x;
    const double s0 = scorer(x);
    std::vector<double> traj{s0};
    for (int t = 0; t < steps; ++t) {
        const Field g = nes_estimate_gradient(scorer, adv, samples, sigma_est, rng);
        for (size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += static_cast<float>(lr) * detail::sgn(g.data[i]);
        detail::project_linf_box(adv, x, eps);
        traj.push_back(s0);  // trajectory of accepted iterates is rescored at the end
    }
    AttackResult r = detail::finish(m, x, std::move(adv), s0, std::move(traj), f.count, ConstraintType::Linf);
    return r;
}

inline AttackResult attack_square(const MetricModel& m, const Image& x, double eps, int steps, double p_init,
                                  std::uint64_t seed) {
    detail::CountingScorer f{&m};
    auto rng = make_rng(seed, 0x59A4Eu);
    const int h = x.height, w = x.width;
    Image adv = x;
    double best = f(x);
    const double s0 = best;
    std::vector<double> traj{best};
    std::uniform_real_distribution<float> coin(0.0f, 1.0f);
    for (int t = 0; t < steps; ++t) {
        const double frac = p_init * std::max(0.05, 1.0 - double(t) / std::max(1, steps));
        const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * h * w))), 1, std::min(h, w));
        std::uniform_int_distribution<int> dy(0, h - side), dx(0, w - side);
        const int top = dy(rng), left = dx(rng);
        Image cand = adv;
        float delta[3];
        for (int c = 0; c < 3; ++c) delta[c] = (coin(rng) < 0.5f ? -1.0f : 1.0f) * static_cast<float>(eps);
        for (int c = 0; c < 3; ++c)
            for (int y = top; y < top + side; ++y)
                for (int j = left; j < left + side; ++j)
                    cand.at(c, y, j) = std::clamp(x.at(c, y, j) + delta[c], 0.0f, 1.0f);
        detail::project_linf_box(cand, x, eps);
        const double s = f(cand);
        if (s > best) {
            best = s;
            adv = std::move(cand);
        }
        traj.push_back(best);
    }
    return detail::finish(m, x, std::move(adv), s0, std::move(traj), f.count, ConstraintType::Linf);
}

inline AttackResult attack_onepixel(const MetricModel& m, const Image& x, int pixel_count, int pop, int iters,
                                    std::uint64_t seed) {
    if (pixel_count < 1) throw ConfigError("onepixel: pixel_count must be >= 1");
    if (pixel_count > x.height * x.width) throw ConfigError("onepixel: pixel_count exceeds image size");
    detail::CountingScorer f{&m};
    auto rng = make_rng(seed, 0x1D1Eu);
    const int h = x.height, w = x.width, dims = pixel_count * 5;
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);

    auto render = [&](const std::vector<float>& genome) {
        Image img = x;
        for (int p = 0; p < pixel_count; ++p) {
            const int py = std::clamp(static_cast<int>(genome[p * 5 + 0] * h), 0, h - 1);
            const int px = std::clamp(static_cast<int>(genome[p * 5 + 1] * w), 0, w - 1);
            for (int c = 0; c < 3; ++c) img.at(c, py, px) = std::clamp(genome[p * 5 + 2 + c], 0.0f, 1.0f);
        }
        return img;
    };

    std::vector<std::vector<float>> genomes(pop, std::vector<float>(dims));
    std::vector<double> fitness(pop);
    for (auto& g : genomes)
        for (auto& v : g) v = uni(rng);
    const double s0 = f(x);
    double best = s0;
    Image best_img = x;
    std::vector<double> traj{best};
    for (int i = 0; i < pop; ++i) {
        const Image img = render(genomes[i]);
        fitness[i] = f(img);
        if (fitness[i] > best) {
            best = fitness[i];
            best_img = img;
        }
    }
    std::uniform_int_distribution<int> pick(0, pop - 1);
    for (int t = 0; t < iters; ++t) {
        for (int i = 0; i < pop; ++i) {
            int a = pick(rng), b = pick(rng), c = pick(rng);
            std::vector<float> mutant(dims);
            for (int d = 0; d < dims; ++d)
                mutant[d] = std::clamp(genomes[a][d] + 0.5f * (genomes[b][d] - genomes[c][d]), 0.0f, 1.0f);
            const Image img = render(mutant);
            const double fit = f(img);
            if (fit > fitness[i]) {
                fitness[i] = fit;
                genomes[i] = std::move(mutant);
                if (fit > best) {
                    best = fit;
                    best_img = img;
                }
            }
        }
        traj.push_back(best);
    }
    return detail::finish(m, x, std::move(best_img), s0, std::move(traj), f.count, ConstraintType::L0);
}

inline AttackResult attack_patch_rs(const MetricModel& m, const Image& x, int patch_size, int iters,
                                    std::uint64_t seed) {
    if (patch_size > std::min(x.height, x.width)) throw ConfigError("patchrs: patch larger than image");
    detail::CountingScorer f{&m};
    auto rng = make_rng(seed, 0x9A7C4u);
    const int h = x.height, w = x.width;
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    std::uniform_int_distribution<int> dy(0, h - patch_size), dx(0, w - patch_size);

    Image adv = x;
    const double s0 = f(x);
    double best = s0;
    std::vector<double> traj{best};
    std::vector<float> content(static_cast<size_t>(3) * patch_size * patch_size, 0.0f);
    int top = 0, left = 0;
    bool placed = false;

    auto render = [&](int t, int l, const std::vector<float>& cont) {
        Image img = x;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < patch_size; ++y)
                for (int j = 0; j < patch_size; ++j)
                    img.at(c, t + y, l + j) = cont[(static_cast<size_t>(c) * patch_size + y) * patch_size + j];
        return img;
    };

    for (int it = 0; it < iters; ++it) {
        int nt = top, nl = left;
        std::vector<float> ncont = content;
        if (!placed || uni(rng) < 0.5f) {
            nt = dy(rng);
            nl = dx(rng);
            if (!placed)
                for (auto& v : ncont) v = uni(rng);
        } else {
            // re-randomize a random sub-square of the patch content
            std::uniform_int_distribution<int> ds(1, patch_size);
            const int side = ds(rng);
            std::uniform_int_distribution<int> off(0, patch_size - side);
            const int oy = off(rng), ox = off(rng);
            for (int c = 0; c < 3; ++c) {
                const float v = uni(rng);
                for (int y = oy; y < oy + side; ++y)
                    for (int j = ox; j < ox + side; ++j)
                        ncont[(static_cast<size_t>(c) * patch_size + y) * patch_size + j] = v;
            }
        }
        const Image cand = render(nt, nl, ncont);
        const double s = f(cand);
        if (s > best) {
            best = s;
            adv = cand;
            top = nt;
            left = nl;
            content = std::move(ncont);
            placed = true;
        }
        traj.push_back(best);
    }
    return detail::finish(m, x, std::move(adv), s0, std::move(traj), f.count, ConstraintType::Psnr);
}

// ---- dispatch & calibration ----

/// Runs `spec` against metric `m` on image `x`. UAP trains its raster on
/// `uap_train` when given, otherwise on the target image alone.
inline AttackResult run_attack(const AttackSpec& spec, const MetricModel& m, const Image& x,
                               const std::vector<Image>* uap_train = nullptr) {
    const double v = spec.varied_param_value;
    switch (spec.name) {
        case AttackName::Ifgsm: return attack_ifgsm(m, x, v, spec.steps, spec.epsilon);
        case AttackName::Uap: {
            const std::vector<Image> self{x};
            const Field p = train_uap(m, uap_train && !uap_train->empty() ? *uap_train : self, v, 5, spec.seed);
            return apply_uap(m, x, p, v);
        }
        case AttackName::Korhonen: return attack_korhonen(m, x, v, spec.steps, spec.epsilon);
        case AttackName::Zhang: return attack_zhang(m, make_ssim_fr(), x, v, spec.steps, 1.0);
        case AttackName::Madc: return attack_madc(m, x, v, spec.steps);
        case AttackName::Stadv: return attack_stadv(m, x, v, spec.steps, 0.05);
        case AttackName::Nes: return attack_nes(m, x, v / 4.0, spec.steps, v, 20, 0.01, spec.seed);
        case AttackName::Square: return attack_square(m, x, v, spec.steps, 0.1, spec.seed);
        case AttackName::OnePixel:
            return attack_onepixel(m, x, std::max(1, static_cast<int>(v)), 10, spec.steps, spec.seed);
        case AttackName::PatchRs:
            return attack_patch_rs(m, x, std::max(1, static_cast<int>(v)), spec.steps, spec.seed);
    }
    throw ConfigError("unknown attack");
}

struct CalibrationTargets {
    double weak = 0.01, medium = 0.05, strong = 0.15;  // in 1 - SSIM
};

/// Measures 1-SSIM distortion over a parameter grid and picks the values
/// closest to the weak/medium/strong targets.
inline StrengthPresets calibrate_strengths(const AttackSpec& base, const MetricModel& m,
                                           const std::vector<Image>& calibration_images,
                                           const std::vector<double>& grid,
                                           const CalibrationTargets& targets = {}) {
    if (grid.size() < 3) throw CalibrationError("calibration grid needs at least 3 values");
    if (calibration_images.empty()) throw CalibrationError("calibration needs at least one image");

    std::vector<double> distortion(grid.size(), 0.0);
    for (size_t gi = 0; gi < grid.size(); ++gi) {
        AttackSpec s = base;
        s.varied_param_value = grid[gi];
        double acc = 0.0;
        for (const Image& img : calibration_images) {
            const AttackResult r = run_attack(s, m, img);
            acc += 1.0 - ssim(r.adversarial, img);
        }
        distortion[gi] = acc / double(calibration_images.size());
    }

    bool monotone = true;
    for (size_t i = 1; i < grid.size(); ++i)
        if (distortion[i] < distortion[i - 1]) monotone = false;

    // presets must be strictly ordered by measured distortion: pick the grid
    // point nearest each target subject to sitting strictly below the previous
    // (stronger) pick, working from strong down to weak
    auto nearest_below = [&](double target, double ceiling) -> size_t {
        size_t best = grid.size();
        for (size_t i = 0; i < grid.size(); ++i) {
            if (distortion[i] >= ceiling) continue;
            if (best == grid.size() || std::abs(distortion[i] - target) < std::abs(distortion[best] - target))
                best = i;
        }
        if (best == grid.size())
            throw CalibrationError("cannot order strength presets: grid distortions are not separable");
        return best;
    };
    const size_t is = nearest_below(targets.strong, std::numeric_limits<double>::infinity());
    const size_t im = nearest_below(targets.medium, distortion[is]);
    const size_t iw = nearest_below(targets.weak, distortion[im]);

    StrengthPresets out;
    out.weak = base;
    out.weak.varied_param_value = grid[iw];
    out.medium = base;
    out.medium.varied_param_value = grid[im];
    out.strong = base;
    out.strong.varied_param_value = grid[is];
    out.distortion_weak = distortion[iw];
    out.distortion_medium = distortion[im];
    out.distortion_strong = distortion[is];
    out.monotone_grid = monotone;
    return out;
}

// ---- preset (de)serialization ----

inline std::string to_string(ConstraintType c) {
    switch (c) {
        case ConstraintType::Linf: return "linf";
        case ConstraintType::L0: return "l0";
        case ConstraintType::Psnr: return "psnr";
        case ConstraintType::SsimBudget: return "ssim-budget";
    }
    return "?";
}

inline ConstraintType constraint_from_string(const std::string& s) {
    if (s == "linf") return ConstraintType::Linf;
    if (s == "l0") return ConstraintType::L0;
    if (s == "psnr") return ConstraintType::Psnr;
    if (s == "ssim-budget") return ConstraintType::SsimBudget;
    throw ConfigError("unknown constraint type: " + s);
}

inline nlohmann::json to_json(const AttackSpec& s) {
    return {{"attack", to_string(s.name)},
            {"varied_param", s.varied_param_value},
            {"steps", s.steps},
            {"constraint", to_string(s.constraint)},
            {"epsilon", s.epsilon},
            {"seed", s.seed}};
}

inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
    AttackSpec s;
    s.name = attack_from_string(j.at("attack").get<std::string>());
    s.varied_param_value = j.value("varied_param", 0.0);
    s.steps = j.value("steps", 10);
    s.constraint = constraint_from_string(j.value("constraint", std::string("linf")));
    s.epsilon = j.value("epsilon", 8.0 / 255);
    s.seed = j.value("seed", std::uint64_t{0});
    return s;
}

inline nlohmann::json to_json(const StrengthPresets& p) {
    nlohmann::json j = to_json(p.weak);
    j.erase("varied_param");
    j["varied_param"] = {{"weak", p.weak.varied_param_value},
                         {"medium", p.medium.varied_param_value},
                         {"strong", p.strong.varied_param_value}};
    j["measured_distortion"] = {{"weak", p.distortion_weak}, {"medium", p.distortion_medium}, {"strong", p.distortion_strong}};
    j["monotone_grid"] = p.monotone_grid;
    return j;
}

inline StrengthPresets presets_from_json(const nlohmann::json& j) {
    StrengthPresets p;
    nlohmann::json base = j;
    base["varied_param"] = 0.0;
    p.weak = attack_spec_from_json(base);
    p.medium = p.weak;
    p.strong = p.weak;
    p.weak.varied_param_value = j.at("varied_param").at("weak").get<double>();
    p.medium.varied_param_value = j.at("varied_param").at("medium").get<double>();
    p.strong.varied_param_value = j.at("varied_param").at("strong").get<double>();
    if (j.contains("measured_distortion")) {
        p.distortion_weak = j["measured_distortion"].value("weak", 0.0);
        p.distortion_medium = j["measured_distortion"].value("medium", 0.0);
        p.distortion_strong = j["measured_distortion"].value("strong", 0.0);
    }
    p.monotone_grid = j.value("monotone_grid", true);
    return p;
}

inline const AttackSpec& preset_for_strength(const StrengthPresets& p, const std::string& strength) {
    if (strength == "weak") return p.weak;
    if (strength == "medium") return p.medium;
    if (strength == "strong") return p.strong;
    throw ConfigError("unknown strength: " + strength);
}

}  // namespace iqabench
