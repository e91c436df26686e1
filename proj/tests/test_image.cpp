#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "tipstate/image.hpp"
#include "tipstate/rng.hpp"

using namespace tipstate;

namespace {

// Independent statistics via long double accumulation.
void oracle_mean_sigma(const ScanImage& img, long double& mean, long double& sigma) {
    long double s = 0.0L;
    for (double v : img.values) s += v;
    mean = s / img.values.size();
    long double q = 0.0L;
    for (double v : img.values) q += (v - mean) * (v - mean);
    sigma = std::sqrt(q / img.values.size());
}

ScanImage random_image(int h, int w, std::uint64_t seed, double lo = -4.0, double hi = 4.0) {
    ScanImage img(h, w);
    Rng rng(seed);
    for (double& v : img.values) v = rng.uniform(lo, hi);
    return img;
}

}  // namespace

TEST_CASE("constant image normalizes to all zeros") {
    ScanImage img(128, 128);
    for (double& v : img.values) v = 7.3;
    const ScanImage out = normalize(img);
    for (double v : out.values) REQUIRE(v == 0.0);
}

TEST_CASE("image already in pipeline form is a fixed point") {
    // Zero mean and sigma = 1/3 make the scale factor 1.
    ScanImage img(16, 16);
    for (int i = 0; i < 256; ++i) img.values[i] = (i % 2 == 0) ? 1.0 / 3.0 : -1.0 / 3.0;
    const ScanImage out = normalize(img);
    for (int i = 0; i < 256; ++i)
        REQUIRE(std::abs(out.values[i] - img.values[i]) < 1e-12);
}

TEST_CASE("ramp image matches independently computed statistics") {
    ScanImage img(64, 64);
    for (int i = 0; i < 64 * 64; ++i) img.values[i] = 10.0 * i / (64.0 * 64.0 - 1.0);
    const ScanImage out = normalize(img);

    long double mean, sigma;
    oracle_mean_sigma(img, mean, sigma);
    REQUIRE(out.in_unit_range());
    long double pre_clamp_mean = 0.0L;
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const long double expect = (img.values[i] - mean) / (3.0L * sigma);
        REQUIRE(std::abs(double(expect) - out.values[i]) < 1e-12);  // ramp never clamps
        pre_clamp_mean += expect;
    }
    pre_clamp_mean /= img.values.size();
    REQUIRE(std::abs(double(pre_clamp_mean)) < 1e-9);
}

TEST_CASE("normalize recenters exactly even with a huge offset") {
    ScanImage img = random_image(32, 32, 3);
    for (double& v : img.values) v += 1.0e9;
    const ScanImage out = normalize(img);
    long double m = 0.0L;
    for (double v : out.values) m += v;
    REQUIRE(std::abs(double(m / out.values.size())) < 1e-9);
}

TEST_CASE("normalize is idempotent on unclamped outputs") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        const ScanImage once = normalize(random_image(48, 48, seed));
        const ScanImage twice = normalize(once);
        for (std::size_t i = 0; i < once.values.size(); ++i)
            REQUIRE(std::abs(once.values[i] - twice.values[i]) < 1e-12);
    }
}

TEST_CASE("normalize clamps heavy-tailed values into range") {
    ScanImage img = random_image(32, 32, 9, -1.0, 1.0);
    img.values[5] = 500.0;
    img.values[900] = -500.0;
    const ScanImage out = normalize(img);
    REQUIRE(out.in_unit_range());
    REQUIRE(out.values[5] == 1.0);
    REQUIRE(out.values[900] == -1.0);
}

TEST_CASE("normalize rejects bad input") {
    ScanImage tiny(7, 12);
    REQUIRE_THROWS_MATCHES(normalize(tiny), Error, ErrorCodeIs(ErrorCode::TooSmall));
    ScanImage nan_img(16, 16);
    nan_img.values[3] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_MATCHES(normalize(nan_img), Error, ErrorCodeIs(ErrorCode::NonFiniteInput));
    ScanImage inf_img(16, 16);
    inf_img.values[7] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_MATCHES(normalize(inf_img), Error, ErrorCodeIs(ErrorCode::NonFiniteInput));
}

TEST_CASE("resize at the same side returns identical values") {
    const ScanImage img = random_image(128, 128, 21, -1.0, 1.0);
    const ScanImage out = resize(img, 128);
    REQUIRE(out.values == img.values);
}

TEST_CASE("resize keeps constants constant") {
    ScanImage img(150, 150);
    for (double& v : img.values) v = 0.37;
    const ScanImage out = resize(img, 128);
    REQUIRE(out.height == 128);
    REQUIRE(out.width == 128);
    for (double v : out.values) REQUIRE(std::abs(v - 0.37) < 1e-12);
}

TEST_CASE("150x150 checkerboard downsizes to match a direct bilinear oracle") {
    ScanImage img(150, 150);
    for (int y = 0; y < 150; ++y)
        for (int x = 0; x < 150; ++x) img.at(y, x) = ((x + y) % 2 == 0) ? 0.8 : -0.8;
    const ScanImage out = resize(img, 128);

    const double r = 150.0 / 128.0;
    for (int y = 0; y < 128; ++y) {
        for (int x = 0; x < 128; ++x) {
            const double sy = std::clamp((y + 0.5) * r - 0.5, 0.0, 149.0);
            const double sx = std::clamp((x + 0.5) * r - 0.5, 0.0, 149.0);
            const int y0 = int(sy), x0 = int(sx);
            const int y1 = std::min(y0 + 1, 149), x1 = std::min(x0 + 1, 149);
            const double fy = sy - y0, fx = sx - x0;
            const double want = img.at(y0, x0) * (1 - fy) * (1 - fx) +
                                img.at(y0, x1) * (1 - fy) * fx +
                                img.at(y1, x0) * fy * (1 - fx) + img.at(y1, x1) * fy * fx;
            REQUIRE(std::abs(out.at(y, x) - want) < 1e-12);
        }
    }
}

TEST_CASE("resize is idempotent at a fixed side") {
    const ScanImage img = random_image(150, 150, 77, -1.0, 1.0);
    const ScanImage once = resize(img, 64);
    const ScanImage twice = resize(once, 64);
    for (std::size_t i = 0; i < once.values.size(); ++i)
        REQUIRE(std::abs(once.values[i] - twice.values[i]) < 1e-12);
}

TEST_CASE("resize preserves the unit range") {
    const ScanImage img = random_image(200, 200, 13, -1.0, 1.0);
    for (int side : {32, 64, 128, 256}) {
        const ScanImage out = resize(img, side);
        REQUIRE(out.height == side);
        REQUIRE(out.in_unit_range());
    }
}

TEST_CASE("resize rejects unsupported sides") {
    const ScanImage img = random_image(64, 64, 1);
    for (int side : {0, 8, 31, 100, 512}) {
        REQUIRE_THROWS_MATCHES(resize(img, side), Error,
                               ErrorCodeIs(ErrorCode::UnsupportedSize));
    }
}
