#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/resample.hpp"
#include "iqabench/rng.hpp"

namespace iqabench {

/// 3x3 convolution layer, reflect-101 padding.
struct ConvLayer {
    int in_ch = 0, out_ch = 0;
    std::vector<float> w;  // out_ch * in_ch * 9
    std::vector<float> b;  // out_ch

    ConvLayer() = default;
    ConvLayer(int ic, int oc) : in_ch(ic), out_ch(oc), w(static_cast<size_t>(oc) * ic * 9, 0.0f), b(oc, 0.0f) {}

    float wk(int o, int i, int ky, int kx) const { return w[((static_cast<size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx]; }
    float& wk(int o, int i, int ky, int kx) { return w[((static_cast<size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx]; }

    Field forward(const Field& in) const {
        const int h = in.height, wd = in.width;
        Field out(out_ch, h, wd);
        for (int o = 0; o < out_ch; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < wd; ++x) {
                    double s = b[o];
                    for (int i = 0; i < in_ch; ++i)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                s += wk(o, i, ky, kx) * in.at(i, reflect_index(y + ky - 1, h), reflect_index(x + kx - 1, wd));
                    out.at(o, y, x) = static_cast<float>(s);
                }
        return out;
    }

    // adjoint wrt the layer input
    Field backward_input(const Field& gout, int h, int wd) const {
        Field gin(in_ch, h, wd);
        for (int o = 0; o < out_ch; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < wd; ++x) {
                    const float g = gout.at(o, y, x);
                    if (g == 0.0f) continue;
                    for (int i = 0; i < in_ch; ++i)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                gin.at(i, reflect_index(y + ky - 1, h), reflect_index(x + kx - 1, wd)) += wk(o, i, ky, kx) * g;
                }
        return gin;
    }

    void accumulate_param_grad(const Field& in, const Field& gout, ConvLayer& grad) const {
        const int h = in.height, wd = in.width;
        for (int o = 0; o < out_ch; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < wd; ++x) {
                    const float g = gout.at(o, y, x);
                    if (g == 0.0f) continue;
                    grad.b[o] += g;
                    for (int i = 0; i < in_ch; ++i)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                grad.wk(o, i, ky, kx) += g * in.at(i, reflect_index(y + ky - 1, h), reflect_index(x + kx - 1, wd));
                }
    }
};

/// Small convolutional scorer: conv(3->8) tanh, conv(8->8) tanh, conv(8->1),
/// global mean, scaled by 100. Smooth everywhere, so finite-difference
/// gradient checks are well posed.
struct ToyNet {
    ConvLayer l1{3, 8}, l2{8, 8}, l3{8, 1};
    double out_scale = 100.0;

    struct Cache {
        Field x, a1, a2, z3;
    };

    static Field tanh_field(const Field& z) {
        Field a = z;
        for (auto& v : a.data) v = std::tanh(v);
        return a;
    }

    double forward(const Image& img, Cache* cache = nullptr) const {
        Field x(3, img.height, img.width);
        x.data.assign(img.data.begin(), img.data.end());
        Field a1 = tanh_field(l1.forward(x));
        Field a2 = tanh_field(l2.forward(a1));
        Field z3 = l3.forward(a2);
        double s = 0.0;
        for (float v : z3.data) s += v;
        s = out_scale * s / double(z3.data.size());
        if (cache) *cache = Cache{std::move(x), std::move(a1), std::move(a2), std::move(z3)};
        return s;
    }

    GradientField input_gradient(const Image& img) const {
        Cache c;
        forward(img, &c);
        const int h = img.height, w = img.width;
        Field g3(1, h, w);
        const float gpool = static_cast<float>(out_scale / double(g3.data.size()));
        for (auto& v : g3.data) v = gpool;
        Field ga2 = l3.backward_input(g3, h, w);
        for (size_t i = 0; i < ga2.data.size(); ++i) ga2.data[i] *= 1.0f - c.a2.data[i] * c.a2.data[i];
        Field ga1 = l2.backward_input(ga2, h, w);
        for (size_t i = 0; i < ga1.data.size(); ++i) ga1.data[i] *= 1.0f - c.a1.data[i] * c.a1.data[i];
        return l1.backward_input(ga1, h, w);
    }

    struct Grads {
        ConvLayer l1{3, 8}, l2{8, 8}, l3{8, 1};
    };

    /// Accumulates d(dscore * score)/d(params) into `g`.
    void param_gradient(const Image& img, double dscore, Grads& g) const {
        Cache c;
        forward(img, &c);
        const int h = img.height, w = img.width;
        Field g3(1, h, w);
        const float gpool = static_cast<float>(dscore * out_scale / double(g3.data.size()));
        for (auto& v : g3.data) v = gpool;
        l3.accumulate_param_grad(c.a2, g3, g.l3);
        Field ga2 = l3.backward_input(g3, h, w);
        for (size_t i = 0; i < ga2.data.size(); ++i) ga2.data[i] *= 1.0f - c.a2.data[i] * c.a2.data[i];
        l2.accumulate_param_grad(c.a1, ga2, g.l2);
        Field ga1 = l2.backward_input(ga2, h, w);
        for (size_t i = 0; i < ga1.data.size(); ++i) ga1.data[i] *= 1.0f - c.a1.data[i] * c.a1.data[i];
        l1.accumulate_param_grad(c.x, ga1, g.l1);
    }

    void sgd_step(const Grads& g, double lr) {
        auto upd = [lr](ConvLayer& l, const ConvLayer& gl) {
            for (size_t i = 0; i < l.w.size(); ++i) l.w[i] -= static_cast<float>(lr * gl.w[i]);
            for (size_t i = 0; i < l.b.size(); ++i) l.b[i] -= static_cast<float>(lr * gl.b[i]);
        };
        upd(l1, g.l1);
        upd(l2, g.l2);
        upd(l3, g.l3);
    }

    std::vector<float> flat_weights() const {
        std::vector<float> v;
        for (const auto* l : {&l1, &l2, &l3}) {
            v.insert(v.end(), l->w.begin(), l->w.end());
            v.insert(v.end(), l->b.begin(), l->b.end());
        }
        return v;
    }

    void load_flat_weights(const std::vector<float>& v) {
        size_t p = 0;
        for (auto* l : {&l1, &l2, &l3}) {
            std::copy(v.begin() + p, v.begin() + p + l->w.size(), l->w.begin());
            p += l->w.size();
            std::copy(v.begin() + p, v.begin() + p + l->b.size(), l->b.begin());
            p += l->b.size();
        }
        if (p != v.size()) throw ConfigError("toy metric checkpoint: weight count mismatch");
    }
};

inline ToyNet random_toy_net(std::uint64_t seed) {
    ToyNet net;
    auto rng = make_rng(seed, 0x70CAFEu);
    auto init = [&](ConvLayer& l) {
        std::normal_distribution<float> nd(0.0f, 1.0f / std::sqrt(static_cast<float>(l.in_ch * 9)));
        for (auto& v : l.w) v = nd(rng);
        for (auto& v : l.b) v = 0.1f * nd(rng);
    };
    init(net.l1);
    init(net.l2);
    init(net.l3);
    return net;
}

inline MetricModel wrap_toy_net(std::shared_ptr<ToyNet> net, const std::string& id, double lo, double hi,
                                bool estimated) {
    MetricModel m;
    m.identifier = id;
    m.range_low = lo;
    m.range_high = hi;
    m.range_estimated = estimated;
    m.score_fn = [net](const Image& x) { return net->forward(x); };
    m.grad_fn = [net](const Image& x) { return net->input_gradient(x); };
    return m;
}

/// Deterministic toy scorer; range measured by scoring 1000 random images and
/// padding min/max by 10% of the observed span.
inline MetricModel build_toy_metric(std::uint64_t seed) {
    auto net = std::make_shared<ToyNet>(random_toy_net(seed));
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 1000; ++i) {
        const Image x = random_image(16, 16, mix_seed(seed, 0x5EEDu, static_cast<std::uint64_t>(i)));
        const double s = net->forward(x);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    double span = hi - lo;
    if (span <= 0.0) span = 1.0;
    lo -= 0.1 * span;
    hi += 0.1 * span;
    return wrap_toy_net(net, "toy-" + std::to_string(seed), lo, hi, true);
}

}  // namespace iqabench
