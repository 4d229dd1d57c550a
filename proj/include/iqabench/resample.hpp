#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "iqabench/image.hpp"

namespace iqabench {

// Reflection without repeating the border sample (OpenCV BORDER_REFLECT_101).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

inline std::vector<float> gaussian_kernel_1d(int size, double sigma) {
    std::vector<float> k(size);
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - c;
        k[i] = static_cast<float>(std::exp(-d * d / (2.0 * sigma * sigma)));
        sum += k[i];
    }
    for (auto& v : k) v = static_cast<float>(v / sum);
    return k;
}

/// Separable 2-D convolution with reflect-101 borders, per plane.
template <typename Raster>
inline Raster separable_filter(const Raster& in, const std::vector<float>& k, int channels) {
    const int h = in.height, w = in.width, r = static_cast<int>(k.size()) / 2;
    Raster tmp = in, out = in;
    for (int c = 0; c < channels; ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int t = -r; t <= r; ++t) s += k[t + r] * in.at(c, y, reflect_index(x + t, w));
                tmp.at(c, y, x) = static_cast<float>(s);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int t = -r; t <= r; ++t) s += k[t + r] * tmp.at(c, reflect_index(y + t, h), x);
                out.at(c, y, x) = static_cast<float>(s);
            }
    }
    return out;
}

/// Exact adjoint of separable_filter (scatter with the same taps and borders).
template <typename Raster>
inline Raster separable_filter_adjoint(const Raster& gbar, const std::vector<float>& k, int channels) {
    const int h = gbar.height, w = gbar.width, r = static_cast<int>(k.size()) / 2;
    Raster tmp = gbar, out = gbar;
    for (auto& v : tmp.data) v = 0.0f;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float g = gbar.at(c, y, x);
                for (int t = -r; t <= r; ++t) tmp.at(c, reflect_index(y + t, h), x) += k[t + r] * g;
            }
    for (auto& v : out.data) v = 0.0f;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float g = tmp.at(c, y, x);
                for (int t = -r; t <= r; ++t) out.at(c, y, reflect_index(x + t, w)) += k[t + r] * g;
            }
    return out;
}

/// One bilinear sampling tap: output pixel p gathers from up to 4 input pixels.
struct BilinearTap {
    int y0, x0, y1, x1;
    float wy, wx;  // fractional weights toward (y1, x1)
};

enum class BorderMode { Reflect, Clamp };

inline BilinearTap bilinear_tap(double sy, double sx, int h, int w, BorderMode border) {
    BilinearTap t{};
    const int fy = static_cast<int>(std::floor(sy));
    const int fx = static_cast<int>(std::floor(sx));
    t.wy = static_cast<float>(sy - fy);
    t.wx = static_cast<float>(sx - fx);
    auto fix = [&](int i, int n) { return border == BorderMode::Reflect ? reflect_index(i, n) : clamp_index(i, n); };
    t.y0 = fix(fy, h);
    t.y1 = fix(fy + 1, h);
    t.x0 = fix(fx, w);
    t.x1 = fix(fx + 1, w);
    return t;
}

/// A fixed resampling plan: output pixel i samples source position (sy[i], sx[i]).
/// Linear in the input, so the adjoint is the transposed scatter.
struct ResamplePlan {
    int out_h = 0, out_w = 0;
    int in_h = 0, in_w = 0;
    BorderMode border = BorderMode::Clamp;
    std::vector<double> sy, sx;  // out_h*out_w source coordinates

    template <typename RasterIn, typename RasterOut>
    void apply(const RasterIn& in, RasterOut& out, int channels) const {
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const size_t i = static_cast<size_t>(y) * out_w + x;
                const BilinearTap t = bilinear_tap(sy[i], sx[i], in_h, in_w, border);
                for (int c = 0; c < channels; ++c) {
                    const float v00 = in.at(c, t.y0, t.x0), v01 = in.at(c, t.y0, t.x1);
                    const float v10 = in.at(c, t.y1, t.x0), v11 = in.at(c, t.y1, t.x1);
                    out.at(c, y, x) = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) + t.wy * ((1 - t.wx) * v10 + t.wx * v11);
                }
            }
    }

    template <typename RasterOut, typename RasterIn>
    void adjoint(const RasterOut& gbar, RasterIn& gin, int channels) const {
        for (auto& v : gin.data) v = 0.0f;
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const size_t i = static_cast<size_t>(y) * out_w + x;
                const BilinearTap t = bilinear_tap(sy[i], sx[i], in_h, in_w, border);
                for (int c = 0; c < channels; ++c) {
                    const float g = gbar.at(c, y, x);
                    gin.at(c, t.y0, t.x0) += (1 - t.wy) * (1 - t.wx) * g;
                    gin.at(c, t.y0, t.x1) += (1 - t.wy) * t.wx * g;
                    gin.at(c, t.y1, t.x0) += t.wy * (1 - t.wx) * g;
                    gin.at(c, t.y1, t.x1) += t.wy * t.wx * g;
                }
            }
    }
};

/// Plan scaling an (in_h, in_w) raster onto an (out_h, out_w) grid
/// (align-centers convention, as cv::resize bilinear).
inline ResamplePlan scale_plan(int in_h, int in_w, int out_h, int out_w) {
    ResamplePlan p;
    p.in_h = in_h;
    p.in_w = in_w;
    p.out_h = out_h;
    p.out_w = out_w;
    p.border = BorderMode::Clamp;
    p.sy.resize(static_cast<size_t>(out_h) * out_w);
    p.sx.resize(p.sy.size());
    const double ry = double(in_h) / out_h, rx = double(in_w) / out_w;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const size_t i = static_cast<size_t>(y) * out_w + x;
            p.sy[i] = (y + 0.5) * ry - 0.5;
            p.sx[i] = (x + 0.5) * rx - 0.5;
        }
    return p;
}

/// Rotation by `angle_deg` around the raster center, reflect borders.
inline ResamplePlan rotate_plan(int h, int w, double angle_deg) {
    ResamplePlan p;
    p.in_h = h;
    p.in_w = w;
    p.out_h = h;
    p.out_w = w;
    p.border = BorderMode::Reflect;
    p.sy.resize(static_cast<size_t>(h) * w);
    p.sx.resize(p.sy.size());
    const double a = angle_deg * M_PI / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            const double dy = y - cy, dx = x - cx;
            // inverse mapping: rotate output coordinates back into the source
            p.sy[i] = cy + ca * dy - sa * dx;
            p.sx[i] = cx + sa * dy + ca * dx;
        }
    return p;
}

/// Crop window (top, left, size) rescaled back to (h, w).
inline ResamplePlan crop_plan(int h, int w, int top, int left, int size) {
    ResamplePlan p;
    p.in_h = h;
    p.in_w = w;
    p.out_h = h;
    p.out_w = w;
    p.border = BorderMode::Clamp;
    p.sy.resize(static_cast<size_t>(h) * w);
    p.sx.resize(p.sy.size());
    const double ry = double(size) / h, rx = double(size) / w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            p.sy[i] = top + (y + 0.5) * ry - 0.5;
            p.sx[i] = left + (x + 0.5) * rx - 0.5;
        }
    return p;
}

}  // namespace iqabench
