#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include "iqabench/image.hpp"

namespace iqabench {

struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AdapterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using GradientField = Field;  // same shape as the scored image, 3 channels

/// A quality scorer with a declared value range. Immutable after construction;
/// scoring and gradients are safe to call concurrently.
struct MetricModel {
    std::string identifier;
    std::function<double(const Image&)> score_fn;
    std::function<GradientField(const Image&)> grad_fn;  // empty when not gradient-capable
    double range_low = 0.0;
    double range_high = 1.0;
    bool range_estimated = false;

    bool gradient_capable() const { return static_cast<bool>(grad_fn); }
    double diam() const { return range_high - range_low; }

    void validate() const {
        if (!(range_high > range_low)) throw ConfigError("metric '" + identifier + "': range_high must exceed range_low");
        if (!score_fn) throw ConfigError("metric '" + identifier + "': missing score function");
    }
};

inline double score(const MetricModel& m, const Image& x) {
    const double s = m.score_fn(x);
    if (!std::isfinite(s)) throw AdapterError("metric '" + m.identifier + "' returned non-finite score");
    return s;
}

inline double normalized_score(const MetricModel& m, const Image& x) { return score(m, x) / m.diam(); }

inline GradientField gradient(const MetricModel& m, const Image& x) {
    if (!m.gradient_capable()) throw CapabilityError("metric '" + m.identifier + "' is not gradient-capable");
    return m.grad_fn(x);
}

/// Gradient of score/diam; the objective every white-box attack ascends.
inline GradientField normalized_gradient(const MetricModel& m, const Image& x) {
    GradientField g = gradient(m, x);
    const double inv = 1.0 / m.diam();
    for (auto& v : g.data) v = static_cast<float>(v * inv);
    return g;
}

inline MetricModel make_constant_metric(double c, double lo = 0.0, double hi = 100.0) {
    MetricModel m;
    m.identifier = "constant";
    m.range_low = lo;
    m.range_high = hi;
    m.score_fn = [c](const Image&) { return c; };
    m.grad_fn = [](const Image& x) { return GradientField(3, x.height, x.width); };
    return m;
}

/// f(x) = <w, x>; the closed-form oracle model for attack tests.
inline MetricModel make_linear_metric(Field weights, double lo = -100.0, double hi = 100.0) {
    MetricModel m;
    m.identifier = "linear";
    m.range_low = lo;
    m.range_high = hi;
    auto w = std::make_shared<Field>(std::move(weights));
    m.score_fn = [w](const Image& x) {
        if (x.height != w->height || x.width != w->width)
            throw ImageError("linear metric: shape unsupported by the model");
        double s = 0.0;
        for (size_t i = 0; i < x.data.size(); ++i) s += double(w->data[i]) * x.data[i];
        return s;
    };
    m.grad_fn = [w](const Image& x) {
        if (x.height != w->height || x.width != w->width)
            throw ImageError("linear metric: shape unsupported by the model");
        return *w;
    };
    return m;
}

/// Central finite differences; the reference oracle for gradient checks.
inline GradientField finite_difference_gradient(const std::function<double(const Image&)>& f, const Image& x,
                                                double h = 1e-3) {
    GradientField g(3, x.height, x.width);
    Image xp = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const float orig = xp.data[i];
        xp.data[i] = orig + static_cast<float>(h);
        const double fp = f(xp);
        xp.data[i] = orig - static_cast<float>(h);
        const double fm = f(xp);
        xp.data[i] = orig;
        g.data[i] = static_cast<float>((fp - fm) / (2 * h));
    }
    return g;
}

}  // namespace iqabench
