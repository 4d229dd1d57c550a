#include <doctest.h>

#include <cmath>

#include "iqabench/adapters.hpp"
#include "iqabench/metric.hpp"
#include "iqabench/toy_metric.hpp"

using namespace iqabench;

TEST_CASE("score determinism and constants") {
    const MetricModel toy = build_toy_metric(7);
    const Image x = random_image(16, 16, 11);
    const double s0 = score(toy, x);
    for (int i = 0; i < 10; ++i) CHECK(std::abs(score(toy, x) - s0) <= 1e-12);

    const MetricModel c = make_constant_metric(42.5);
    CHECK(score(c, x) == doctest::Approx(42.5));
}

TEST_CASE("linear metric matches brute-force dot product") {
    Field w(3, 16, 16);
    auto rng = make_rng(5);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    for (auto& v : w.data) v = nd(rng);
    const MetricModel lin = make_linear_metric(w);
    const Image x = random_image(16, 16, 12);

    double oracle = 0.0;  // elementwise-sum oracle
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int j = 0; j < 16; ++j) oracle += double(w.at(c, y, j)) * x.at(c, y, j);
    CHECK(score(lin, x) == doctest::Approx(oracle).epsilon(1e-12));

    CHECK_THROWS_AS(score(lin, random_image(8, 8, 1)), ImageError);
}

TEST_CASE("normalized_score") {
    MetricModel m = make_constant_metric(50.0, 0.0, 100.0);
    const Image x = random_image(8, 8, 13);
    CHECK(normalized_score(m, x) == doctest::Approx(0.5));
    m.score_fn = [](const Image&) { return 100.0; };
    CHECK(normalized_score(m, x) == doctest::Approx(1.0));

    const MetricModel toy = build_toy_metric(3);
    CHECK(normalized_score(toy, x) == doctest::Approx(score(toy, x) / (toy.range_high - toy.range_low)));
}

TEST_CASE("normalized_score invariant under joint affine rescale") {
    MetricModel m = make_constant_metric(30.0, 0.0, 100.0);
    const Image x = random_image(8, 8, 14);
    const double base = normalized_score(m, x);
    MetricModel scaled = m;
    scaled.range_low *= 7.0;
    scaled.range_high *= 7.0;
    scaled.score_fn = [](const Image&) { return 7.0 * 30.0; };
    CHECK(normalized_score(scaled, x) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("gradients: linear exact, constant zero, toy vs finite differences") {
    Field w(3, 8, 8);
    auto rng = make_rng(6);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    for (auto& v : w.data) v = nd(rng);
    const MetricModel lin = make_linear_metric(w);
    const Image x = random_image(8, 8, 15);
    const GradientField gl = gradient(lin, x);
    for (size_t i = 0; i < w.data.size(); ++i) CHECK(gl.data[i] == w.data[i]);

    const GradientField gc = gradient(make_constant_metric(1.0), x);
    for (float v : gc.data) CHECK(v == 0.0f);

    const MetricModel toy = build_toy_metric(7);
    const GradientField g = gradient(toy, x);
    const GradientField fd = finite_difference_gradient(toy.score_fn, x, 1e-3);
    for (size_t i = 0; i < g.data.size(); ++i)
        CHECK(std::abs(g.data[i] - fd.data[i]) <= 1e-3 * (1.0 + std::abs(fd.data[i])));
}

TEST_CASE("gradient capability error") {
    MetricModel m = make_constant_metric(1.0);
    m.grad_fn = nullptr;
    CHECK_THROWS_AS(gradient(m, random_image(8, 8, 16)), CapabilityError);
}

TEST_CASE("build_toy_metric seeding and range") {
    const MetricModel a = build_toy_metric(21);
    const MetricModel b = build_toy_metric(21);
    const MetricModel c = build_toy_metric(22);
    const Image fix = random_image(16, 16, 17);
    CHECK(score(a, fix) == doctest::Approx(score(b, fix)));
    CHECK(a.range_low == b.range_low);

    bool any_differ = false;
    for (int i = 0; i < 10; ++i) {
        const Image f = random_image(16, 16, 100 + i);
        if (std::abs(score(a, f) - score(c, f)) > 1e-9) any_differ = true;
    }
    CHECK(any_differ);

    for (int i = 0; i < 100; ++i) {
        const double s = score(a, random_image(16, 16, 9000 + i));
        CHECK(s >= a.range_low);
        CHECK(s <= a.range_high);
    }
    CHECK(a.range_estimated);
}

TEST_CASE("external metric adapter") {
    // self-adapter: file endpoint that decodes and scores with the toy metric
    const MetricModel toy = build_toy_metric(9);
    MetricAdapterDescriptor d;
    d.identifier = "toy-file";
    d.range_low = toy.range_low;
    d.range_high = toy.range_high;
    const MetricModel wrapped = register_external_metric(d, [&](const fs::path& p) { return score(toy, load_image(p)); });
    CHECK_FALSE(wrapped.gradient_capable());

    const Image x = random_image(16, 16, 18);
    // round trip through the 8-bit file quantizes pixels; compare against
    // scoring the quantized image directly
    Image q = x;
    for (auto& v : q.data) v = std::round(v * 255.0f) / 255.0f;
    CHECK(score(wrapped, x) == doctest::Approx(score(toy, q)).epsilon(1e-6));

    MetricAdapterDescriptor missing = d;
    missing.range_high.reset();
    CHECK_THROWS_AS(register_external_metric(missing, FileScoringEndpoint{}), ConfigError);

    MetricAdapterDescriptor echo = d;
    echo.command = "echo not-a-number";
    const MetricModel bad = register_external_metric(echo);
    CHECK_THROWS_AS(score(bad, x), AdapterError);

    MetricAdapterDescriptor num = d;
    num.command = "echo 42.5";
    const MetricModel fixed = register_external_metric(num);
    CHECK(score(fixed, x) == doctest::Approx(42.5));
}
