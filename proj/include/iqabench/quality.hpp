#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "iqabench/image.hpp"
#include "iqabench/resample.hpp"

namespace iqabench {

struct QualityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kPsnrCeiling = 40.0;  // Q_score clamp; documented in report footers

inline double mse(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - b.data[i];
        s += d * d;
    }
    return s / double(a.data.size());
}

/// PSNR in dB for pixels in [0,1], clamped to 40 dB (identical images hit the clamp).
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCeiling;
    return std::min(kPsnrCeiling, 10.0 * std::log10(1.0 / m));
}

namespace detail {
inline const std::vector<float>& ssim_kernel() {
    static const std::vector<float> k = gaussian_kernel_1d(11, 1.5);
    return k;
}
}  // namespace detail

/// Mean single-scale SSIM, Gaussian 11x11 sigma=1.5, K1=0.01, K2=0.03,
/// computed per channel and averaged.
inline double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b);
    const auto& k = detail::ssim_kernel();
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    Field aa(3, a.height, a.width), bb(3, a.height, a.width), ab(3, a.height, a.width);
    Field fa(3, a.height, a.width), fb(3, a.height, a.width);
    for (size_t i = 0; i < a.data.size(); ++i) {
        fa.data[i] = a.data[i];
        fb.data[i] = b.data[i];
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    const Field mu_a = separable_filter(fa, k, 3), mu_b = separable_filter(fb, k, 3);
    const Field m_aa = separable_filter(aa, k, 3), m_bb = separable_filter(bb, k, 3);
    const Field m_ab = separable_filter(ab, k, 3);

    double acc = 0.0;
    for (size_t i = 0; i < fa.data.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double va = m_aa.data[i] - ma * ma, vb = m_bb.data[i] - mb * mb;
        const double cab = m_ab.data[i] - ma * mb;
        const double num = (2 * ma * mb + C1) * (2 * cab + C2);
        const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        acc += num / den;
    }
    return acc / double(fa.data.size());
}

/// Analytic gradient of ssim(a, b) with respect to `a` (exact filter adjoint).
inline Field ssim_gradient(const Image& a, const Image& b) {
    require_same_shape(a, b);
    const auto& k = detail::ssim_kernel();
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int h = a.height, w = a.width;

    Field fa(3, h, w), fb(3, h, w), aa(3, h, w), bb(3, h, w), ab(3, h, w);
    for (size_t i = 0; i < a.data.size(); ++i) {
        fa.data[i] = a.data[i];
        fb.data[i] = b.data[i];
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    const Field mu_a = separable_filter(fa, k, 3), mu_b = separable_filter(fb, k, 3);
    const Field m_aa = separable_filter(aa, k, 3), m_bb = separable_filter(bb, k, 3);
    const Field m_ab = separable_filter(ab, k, 3);

    // Per-window partials of S wrt mu_a, var_a and cov_ab, folded into three
    // scatter fields; mean over all windows handled by 1/N at the end.
    Field wmu(3, h, w), wvar(3, h, w), wcov(3, h, w);
    for (size_t i = 0; i < fa.data.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double va = m_aa.data[i] - ma * ma, vb = m_bb.data[i] - mb * mb;
        const double cab = m_ab.data[i] - ma * mb;
        const double A1 = 2 * ma * mb + C1, A2 = 2 * cab + C2;
        const double B1 = ma * ma + mb * mb + C1, B2 = va + vb + C2;
        const double dA1 = A2 / (B1 * B2);
        const double dA2 = A1 / (B1 * B2);
        const double dB1 = -A1 * A2 / (B1 * B1 * B2);
        const double dB2 = -A1 * A2 / (B1 * B2 * B2);
        const double dcov = 2 * dA2;
        const double dvar = dB2;
        wcov.data[i] = static_cast<float>(dcov);
        wvar.data[i] = static_cast<float>(dvar);
        // mu_a also feeds var_a (-2 mu_a) and cov_ab (-mu_b)
        wmu.data[i] = static_cast<float>(2 * mb * dA1 + 2 * ma * dB1 - 2 * ma * dvar - mb * dcov);
    }
    const Field gmu = separable_filter_adjoint(wmu, k, 3);
    const Field gvar = separable_filter_adjoint(wvar, k, 3);
    const Field gcov = separable_filter_adjoint(wcov, k, 3);

    Field grad(3, h, w);
    const double inv_n = 1.0 / double(fa.data.size());
    for (size_t i = 0; i < grad.data.size(); ++i)
        grad.data[i] = static_cast<float>(inv_n * (gmu.data[i] + 2.0 * a.data[i] * gvar.data[i] + b.data[i] * gcov.data[i]));
    return grad;
}

// ---- rank correlation ----

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (double(i) + double(j)) / 2.0 + 1.0;  // mean rank for ties
        for (size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& u, const std::vector<double>& v) {
    const size_t n = u.size();
    double mu = std::accumulate(u.begin(), u.end(), 0.0) / n;
    double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double suv = 0, suu = 0, svv = 0;
    for (size_t i = 0; i < n; ++i) {
        suv += (u[i] - mu) * (v[i] - mv);
        suu += (u[i] - mu) * (u[i] - mu);
        svv += (v[i] - mv) * (v[i] - mv);
    }
    if (suu <= 0.0 || svv <= 0.0) throw QualityError("undefined correlation: zero rank variance");
    return suv / std::sqrt(suu * svv);
}

/// Spearman rank-order correlation (mean ranks for ties).
inline double srocc(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw QualityError("srocc: length mismatch");
    if (u.size() < 2) throw QualityError("srocc: need at least 2 samples");
    return pearson(average_ranks(u), average_ranks(v));
}

// ---- dataset features ----

inline Field luma_plane(const Image& x) {
    Field y(1, x.height, x.width);
    for (int i = 0; i < x.height; ++i)
        for (int j = 0; j < x.width; ++j)
            y.at(0, i, j) = 0.299f * x.at(0, i, j) + 0.587f * x.at(1, i, j) + 0.114f * x.at(2, i, j);
    return y;
}

/// Sobel gradient magnitude of a single plane (reflect borders).
inline Field sobel_magnitude(const Field& p) {
    const int h = p.height, w = p.width;
    Field m(1, h, w);
    static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = 0, gy = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const float v = p.at(0, reflect_index(y + dy, h), reflect_index(x + dx, w));
                    gx += kx[dy + 1][dx + 1] * v;
                    gy += ky[dy + 1][dx + 1] * v;
                }
            m.at(0, y, x) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
        }
    return m;
}

/// Spatial Information: population std of the Sobel magnitude over the luma plane.
inline double spatial_information(const Image& x) {
    const Field m = sobel_magnitude(luma_plane(x));
    double mean = 0.0;
    for (float v : m.data) mean += v;
    mean /= double(m.data.size());
    double var = 0.0;
    for (float v : m.data) var += (v - mean) * (v - mean);
    return std::sqrt(var / double(m.data.size()));
}

/// Hasler-Suesstrunk colorfulness on [0,1] pixels.
inline double colorfulness(const Image& x) {
    const size_t n = static_cast<size_t>(x.height) * x.width;
    double m_rg = 0, m_yb = 0;
    for (int y = 0; y < x.height; ++y)
        for (int j = 0; j < x.width; ++j) {
            m_rg += x.at(0, y, j) - x.at(1, y, j);
            m_yb += 0.5 * (x.at(0, y, j) + x.at(1, y, j)) - x.at(2, y, j);
        }
    m_rg /= n;
    m_yb /= n;
    double v_rg = 0, v_yb = 0;
    for (int y = 0; y < x.height; ++y)
        for (int j = 0; j < x.width; ++j) {
            const double rg = x.at(0, y, j) - x.at(1, y, j);
            const double yb = 0.5 * (x.at(0, y, j) + x.at(1, y, j)) - x.at(2, y, j);
            v_rg += (rg - m_rg) * (rg - m_rg);
            v_yb += (yb - m_yb) * (yb - m_yb);
        }
    v_rg /= n;
    v_yb /= n;
    return std::sqrt(v_rg + v_yb) + 0.3 * std::sqrt(m_rg * m_rg + m_yb * m_yb);
}

}  // namespace iqabench
