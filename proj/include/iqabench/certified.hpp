#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>

#include "iqabench/adapters.hpp"
#include "iqabench/image.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/rng.hpp"

namespace iqabench {

struct SmoothingConfig {
    double sigma = 0.1;          // Gaussian noise std, pixel units
    int n0 = 100;                // class-guess samples
    int n = 1000;                // certification samples
    double alpha = 0.001;        // one-sided confidence level
    double epsilon_cert = 0.0;   // l2 ball radius for delta certification
    std::shared_ptr<PurifierFn> denoiser;  // optional: applied before scoring

    void validate() const {
        if (!(sigma > 0)) throw ConfigError("smoothing: sigma must be > 0");
        if (n0 < 1 || n < n0) throw ConfigError("smoothing: need n >= n0 >= 1");
        if (!(alpha > 0 && alpha <= 0.5)) throw ConfigError("smoothing: alpha must be in (0, 0.5]");
        if (epsilon_cert < 0) throw ConfigError("smoothing: epsilon_cert must be >= 0");
    }
};

/// 12 quality classes: 0 below range, 1..segments equal-width left-closed
/// segments, segments+1 above. Interior boundaries assign upward.
struct QualityClassBinning {
    double range_low = 0.0, range_high = 100.0;
    int segments = 10;

    void validate() const {
        if (!(range_high > range_low)) throw ConfigError("binning: invalid range");
        if (segments < 1) throw ConfigError("binning: segments must be >= 1");
    }
    int num_classes() const { return segments + 2; }
};

inline int bin_score(double s, const QualityClassBinning& b) {
    b.validate();
    if (s < b.range_low) return 0;
    if (s >= b.range_high) return b.segments + 1;
    const int seg = static_cast<int>(std::floor(b.segments * (s - b.range_low) / (b.range_high - b.range_low)));
    return 1 + std::min(seg, b.segments - 1);
}

enum class CertificationKind { Classification, Regression };

struct CertificationResult {
    CertificationKind kind = CertificationKind::Classification;
    int quality_class = -1;       // classification route
    double score = 0.0;           // regression route: smoothed median
    std::optional<double> certified_radius;   // l2, pixel units
    std::optional<double> certified_delta;    // metric units
    std::optional<double> certified_relative_delta;  // fraction of diam
    std::optional<double> interval_low, interval_high;  // regression bounds
    bool abstained = false;
    bool tie_broken = false;      // n0 majority vote was tied
    int majority_votes = 0;       // certification-round votes for the class
    int samples_used = 0;
};

struct InsufficientSamplesError : std::runtime_error {
    int minimum_n;
    explicit InsufficientSamplesError(int min_n)
        : std::runtime_error("median certification needs at least n = " + std::to_string(min_n) + " samples"),
          minimum_n(min_n) {}
};

/// One-sided Clopper-Pearson lower bound: the largest p such that observing
/// >= k successes among n Bernoulli(p) trials has probability >= alpha.
inline double lower_conf_bound(int k, int n, double alpha) {
    if (k < 0 || n < 1 || k > n) throw ConfigError("lower_conf_bound: need 0 <= k <= n");
    if (k == 0) return 0.0;
    // exact binomial inversion via the beta quantile
    const boost::math::beta_distribution<double> beta(k, n - k + 1);
    return boost::math::quantile(beta, alpha);
}

namespace detail {

inline Image noisy_copy(const Image& x, double sigma, std::uint64_t seed, std::uint64_t sample_index) {
    auto rng = make_rng(mix_seed(seed, 0x5160AAu, sample_index));
    std::normal_distribution<float> nd(0.0f, static_cast<float>(sigma));
    Image out = x;
    for (auto& v : out.data) v += nd(rng);
    return out;
}

inline double smoothed_sample_score(const MetricModel& m, const Image& x, const SmoothingConfig& cfg,
                                    std::uint64_t seed, std::uint64_t sample_index) {
    Image noisy = noisy_copy(x, cfg.sigma, seed, sample_index);
    if (cfg.denoiser && *cfg.denoiser) {
        noisy.clamp01();  // purifier adapters assume [0,1] input
        noisy = (*cfg.denoiser)(noisy);
    }
    return score(m, noisy);
}

}  // namespace detail

/// Randomized-smoothing classification over quality classes: n0 samples pick
/// the majority class, n more certify it. Certifies an l2 radius
/// sigma * Phi^-1(p_lower) when p_lower > 1/2, abstains otherwise.
inline CertificationResult smooth_classify_certify(const MetricModel& m, const Image& x,
                                                   const QualityClassBinning& b, const SmoothingConfig& cfg,
                                                   std::uint64_t seed = 0) {
    cfg.validate();
    b.validate();
    CertificationResult r;
    r.kind = CertificationKind::Classification;
    r.samples_used = cfg.n0 + cfg.n;

    std::vector<int> votes(b.num_classes(), 0);
    for (int i = 0; i < cfg.n0; ++i)
        ++votes[bin_score(detail::smoothed_sample_score(m, x, cfg, seed, std::uint64_t(i)), b)];
    int guess = 0;
    for (int c = 1; c < b.num_classes(); ++c)
        if (votes[c] > votes[guess]) guess = c;  // ties break to the lower class
    for (int c = 0; c < b.num_classes(); ++c)
        if (c != guess && votes[c] == votes[guess]) r.tie_broken = true;
    r.quality_class = guess;

    int count = 0;
    for (int i = 0; i < cfg.n; ++i)
        if (bin_score(detail::smoothed_sample_score(m, x, cfg, seed, std::uint64_t(cfg.n0 + i)), b) == guess) ++count;
    r.majority_votes = count;

    const double p_lower = lower_conf_bound(count, cfg.n, cfg.alpha);
    if (p_lower > 0.5) {
        const boost::math::normal_distribution<double> norm;
        r.certified_radius = cfg.sigma * boost::math::quantile(norm, p_lower);
    } else {
        r.abstained = true;
    }
    return r;
}

/// Median of n noisy (optionally denoised) scores. Even n averages the two
/// middle order statistics.
inline double median_smooth(const MetricModel& m, const Image& x, const SmoothingConfig& cfg, std::uint64_t seed = 0) {
    cfg.validate();
    std::vector<double> s(cfg.n);
    for (int i = 0; i < cfg.n; ++i) s[i] = detail::smoothed_sample_score(m, x, cfg, seed, std::uint64_t(i));
    std::sort(s.begin(), s.end());
    const int n = cfg.n;
    return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

/// Order-statistic certification of the smoothed median: with confidence
/// 1 - 2*alpha, any l2 perturbation within epsilon_cert moves the smoothed
/// median by no more than the returned delta.
inline CertificationResult certify_median_delta(const MetricModel& m, const Image& x, const SmoothingConfig& cfg,
                                                std::uint64_t seed = 0) {
    cfg.validate();
    const boost::math::normal_distribution<double> norm;
    const double p_lo = boost::math::cdf(norm, -cfg.epsilon_cert / cfg.sigma);
    const double p_hi = boost::math::cdf(norm, cfg.epsilon_cert / cfg.sigma);
    const int n = cfg.n;

    // smallest n for which both one-sided order-statistic bounds exist:
    // (1 - p_lo)^n <= alpha and p_hi^n <= alpha
    const int min_n = static_cast<int>(std::ceil(
        std::max(std::log(cfg.alpha) / std::log1p(-p_lo), std::log(cfg.alpha) / std::log(p_hi))));
    const boost::math::binomial_distribution<double> bin_lo(n, p_lo), bin_hi(n, p_hi);
    // k_lower: largest k with P(Bin(n,p_lo) <= k-1) <= alpha
    int k_lower = 0;
    for (int k = 1; k <= n && boost::math::cdf(bin_lo, k - 1) <= cfg.alpha; ++k) k_lower = k;
    // k_upper: smallest k with P(Bin(n,p_hi) <= k-1) >= 1 - alpha
    int k_upper = n + 1;
    for (int k = n; k >= 1 && boost::math::cdf(bin_hi, k - 1) >= 1.0 - cfg.alpha; --k) k_upper = k;
    if (k_lower < 1 || k_upper > n) throw InsufficientSamplesError(std::max(min_n, n + 1));

    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = detail::smoothed_sample_score(m, x, cfg, seed, std::uint64_t(i));
    std::sort(s.begin(), s.end());

    CertificationResult r;
    r.kind = CertificationKind::Regression;
    r.samples_used = n;
    r.score = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    r.interval_low = s[k_lower - 1];
    r.interval_high = s[k_upper - 1];
    r.certified_delta = *r.interval_high - *r.interval_low;
    r.certified_relative_delta = *r.certified_delta / m.diam();
    return r;
}

}  // namespace iqabench
