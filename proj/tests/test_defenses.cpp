#include <doctest.h>

#include <cmath>

#include "iqabench/defenses.hpp"
#include "iqabench/quality.hpp"
#include "iqabench/toy_metric.hpp"

using namespace iqabench;

namespace {

// smooth low-frequency fixture standing in for photographic content
Image photo_fixture(int h, int w) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = double(x) / w, v = double(y) / h;
            img.at(0, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(2 * M_PI * u) * std::cos(M_PI * v));
            img.at(1, y, x) = static_cast<float>(0.4 + 0.25 * std::cos(2 * M_PI * v + 1.0));
            img.at(2, y, x) = static_cast<float>(0.5 + 0.2 * std::sin(M_PI * (u + v)));
        }
    img.clamp01();
    return img;
}

Image midrange_random(int h, int w, std::uint64_t seed) {
    Image img = random_image(h, w, seed);
    for (auto& v : img.data) v = 0.25f + 0.5f * v;  // keep away from clip boundaries
    return img;
}

double variance(const Image& x) {
    double m = 0;
    for (float v : x.data) m += v;
    m /= x.data.size();
    double s = 0;
    for (float v : x.data) s += (v - m) * (v - m);
    return s / x.data.size();
}

}  // namespace

TEST_CASE("purify dispatch basics") {
    const Image x = random_image(16, 16, 31);

    DefenseSpec flip{DefenseName::Flip};
    const Image once = purify(flip, x);
    const Image twice = purify(flip, once);
    CHECK(twice.data == x.data);

    DefenseSpec jpeg100{DefenseName::Jpeg, 100};
    CHECK(psnr(purify(jpeg100, photo_fixture(32, 32)), photo_fixture(32, 32)) == doctest::Approx(40.0));

    DefenseSpec noise{DefenseName::RandomNoise, 0.05, 77};
    const Image n1 = purify(noise, x);
    const Image n2 = purify(noise, x);
    CHECK(n1.data == n2.data);
}

TEST_CASE("shape and range preservation across defenses") {
    const Image x = random_image(24, 16, 32);
    const std::vector<DefenseSpec> specs = {
        {DefenseName::None},          {DefenseName::Jpeg, 60},         {DefenseName::DiffJpeg, 60},
        {DefenseName::ColorQuant, 8}, {DefenseName::Resize, 0.75},     {DefenseName::BilinearUpscale, 0.5},
        {DefenseName::Rotate, 5, 3},  {DefenseName::Crop, 12, 3},      {DefenseName::Flip},
        {DefenseName::GaussianBlur, 3}, {DefenseName::MedianBlur, 3},  {DefenseName::Unsharp, 5},
        {DefenseName::RandomNoise, 0.1, 3}};
    for (const auto& s : specs) {
        const Image out = purify(s, x);
        CHECK(out.height == x.height);
        CHECK(out.width == x.width);
        for (float v : out.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("jpeg and diffjpeg") {
    const Image gray = constant_image(16, 16, 0.5f, 0.5f, 0.5f);
    CHECK(linf_distance(jpeg_defend(gray, 75), gray) <= 1.0 / 255 + 1e-6);
    CHECK(linf_distance(diffjpeg_defend(gray, 75), gray) <= 1.0 / 255 + 1e-6);

    const Image photo = photo_fixture(32, 32);
    for (int q : {50, 75, 90}) {
        const Image a = jpeg_defend(photo, q);
        const Image b = diffjpeg_defend(photo, q);
        double mad = 0;
        for (size_t i = 0; i < a.data.size(); ++i) mad += std::abs(a.data[i] - b.data[i]);
        mad /= a.data.size();
        CHECK(mad <= 0.02);
    }

    CHECK(psnr(jpeg_defend(photo, 10), photo) < psnr(jpeg_defend(photo, 90), photo));
    CHECK_THROWS(jpeg_defend(photo, 0));
    CHECK_THROWS(diffjpeg_defend(photo, 101));
}

TEST_CASE("diffjpeg vjp matches finite differences on an 8x8 fixture") {
    const Image x = midrange_random(8, 8, 33);
    Field gbar(3, 8, 8);
    auto rng = make_rng(34);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    for (auto& v : gbar.data) v = nd(rng);

    auto h = [&](const Image& img) {
        const Image out = diffjpeg_defend(img, 60);
        double s = 0;
        for (size_t i = 0; i < out.data.size(); ++i) s += double(gbar.data[i]) * out.data[i];
        return s;
    };
    const Field g = detail::diffjpeg_vjp(x, 60, gbar);
    Image xp = x;
    const double step = 1e-4;
    for (size_t i = 0; i < x.data.size(); i += 7) {
        const float orig = xp.data[i];
        xp.data[i] = orig + static_cast<float>(step);
        const double fp = h(xp);
        xp.data[i] = orig - static_cast<float>(step);
        const double fm = h(xp);
        xp.data[i] = orig;
        const double fd = (fp - fm) / (2 * step);
        CHECK(std::abs(g.data[i] - fd) <= 1e-2 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("color quantization") {
    const Image x = random_image(16, 16, 35);
    CHECK(linf_distance(color_quantize(x, 256), x) <= 1.0 / 510 + 1e-7);

    const Image q2 = color_quantize(x, 2);
    for (float v : q2.data) CHECK((v == 0.0f || v == 1.0f));

    Image tie = constant_image(8, 8, 0.49f, 0.5f, 0.51f);
    const Image qt = color_quantize(tie, 2);
    CHECK(qt.at(0, 0, 0) == 0.0f);  // 0.49 -> 0
    CHECK(qt.at(1, 0, 0) == 0.0f);  // exact tie rounds down
    CHECK(qt.at(2, 0, 0) == 1.0f);

    CHECK_THROWS_AS(color_quantize(x, 1), ConfigError);
}

TEST_CASE("geometric defenses") {
    const Image x = random_image(16, 16, 36);

    const Image r0 = geometric_defend(x, DefenseName::Rotate, 0.0, 5);
    CHECK(linf_distance(r0, x) <= 1e-6);

    // Nyquist checkerboard collapses under 0.5 downscale
    Image check(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int j = 0; j < 16; ++j)
            for (int c = 0; c < 3; ++c) check.at(c, y, j) = ((y + j) % 2) ? 1.0f : 0.0f;
    const Image up = geometric_defend(check, DefenseName::BilinearUpscale, 0.5, 0);
    CHECK(variance(up) < 0.25 * variance(check));

    // seeded crop deterministic, distinct seeds give distinct windows
    const Image c1 = geometric_defend(x, DefenseName::Crop, 10, 1);
    const Image c2 = geometric_defend(x, DefenseName::Crop, 10, 1);
    CHECK(c1.data == c2.data);

    CHECK_THROWS_AS(geometric_defend(x, DefenseName::Crop, 99, 1), ConfigError);
    CHECK_THROWS_AS(geometric_defend(x, DefenseName::Resize, -1.0, 1), ConfigError);
}

TEST_CASE("filter defenses") {
    const Image x = random_image(16, 16, 37);
    CHECK(median_blur_defend(x, 1).data == x.data);
    CHECK(gaussian_blur_defend(x, 1).data == x.data);

    const Image gray = constant_image(16, 16, 0.3f, 0.6f, 0.9f);
    CHECK(linf_distance(gaussian_blur_defend(gray, 5), gray) <= 1e-6);

    // median k=3 removes a single-pixel impulse exactly
    Image flat = constant_image(16, 16, 0.2f, 0.2f, 0.2f);
    flat.at(0, 8, 8) = 1.0f;
    const Image m = median_blur_defend(flat, 3);
    CHECK(linf_distance(m, constant_image(16, 16, 0.2f, 0.2f, 0.2f)) == 0.0);

    CHECK_THROWS_AS(gaussian_blur_defend(x, 4), ConfigError);
}

TEST_CASE("random noise statistics") {
    const Image half = constant_image(64, 64, 0.5f, 0.5f, 0.5f);
    CHECK(random_noise_defend(half, 0.0, 1).data == half.data);

    const Image big = constant_image(512, 512, 0.5f, 0.5f, 0.5f);
    const Image noisy = random_noise_defend(big, 0.05, 9);
    double m = 0;
    for (size_t i = 0; i < noisy.data.size(); ++i) m += noisy.data[i] - 0.5;
    m /= noisy.data.size();
    double s = 0;
    for (size_t i = 0; i < noisy.data.size(); ++i) {
        const double d = noisy.data[i] - 0.5 - m;
        s += d * d;
    }
    const double std_hat = std::sqrt(s / noisy.data.size());
    CHECK(std::abs(std_hat - 0.05) <= 0.05 * 0.05);
}

TEST_CASE("gradient honesty: every differentiable defense passes FD through the toy metric") {
    const MetricModel toy = build_toy_metric(41);
    const Image x = midrange_random(16, 16, 42);
    const std::vector<DefenseSpec> specs = {
        {DefenseName::None},        {DefenseName::DiffJpeg, 70},      {DefenseName::Resize, 0.75},
        {DefenseName::BilinearUpscale, 0.5}, {DefenseName::Rotate, 8, 5}, {DefenseName::Crop, 12, 5},
        {DefenseName::Flip},        {DefenseName::GaussianBlur, 3},   {DefenseName::Unsharp, 3},
        {DefenseName::RandomNoise, 0.02, 5}};
    for (const auto& spec : specs) {
        CAPTURE(to_string(spec.name));
        auto h = [&](const Image& img) { return score(toy, purify(spec, img)); };
        const Image px = purify(spec, x);
        const Field g = purify_vjp(spec, x, gradient(toy, px));
        Image xp = x;
        for (size_t i = 0; i < x.data.size(); i += 53) {
            const float orig = xp.data[i];
            xp.data[i] = orig + 1e-3f;
            const double fp = h(xp);
            xp.data[i] = orig - 1e-3f;
            const double fm = h(xp);
            xp.data[i] = orig;
            const double fd = (fp - fm) / 2e-3;
            CHECK(std::abs(g.data[i] - fd) <= 1e-2 * (1.0 + std::abs(fd)));
        }
    }
}

TEST_CASE("non-differentiable defenses refuse vjp and adaptive composition") {
    const Image x = random_image(8, 8, 43);
    Field g(3, 8, 8);
    CHECK_THROWS_AS(purify_vjp(DefenseSpec{DefenseName::Jpeg, 60}, x, g), CapabilityError);
    CHECK_THROWS_AS(purify_vjp(DefenseSpec{DefenseName::ColorQuant, 8}, x, g), CapabilityError);
    CHECK_THROWS_AS(purify_vjp(DefenseSpec{DefenseName::MedianBlur, 3}, x, g), CapabilityError);
    CHECK_THROWS_AS(compose_defended_metric(build_toy_metric(1), DefenseSpec{DefenseName::Jpeg, 60}), ConfigError);
}

TEST_CASE("external purifier adapter") {
    Image x = random_image(16, 16, 44);
    for (auto& v : x.data) v = std::round(v * 255.0f) / 255.0f;  // 8-bit lattice

    DefenseSpec identity = register_external_purifier("cp-identity", make_process_purifier("cp {input} {output}", "cp"));
    const Image out = purify(identity, x);
    CHECK(out.data == x.data);
    for (float v : out.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    const fs::path wrong = unique_temp_path("wrong-shape", ".png");
    save_png(random_image(8, 8, 45), wrong);
    DefenseSpec bad = register_external_purifier("wrong", make_process_purifier("cp " + wrong.string() + " {output}", "wrong"));
    CHECK_THROWS_AS(purify(bad, x), AdapterError);
    fs::remove(wrong);
}
