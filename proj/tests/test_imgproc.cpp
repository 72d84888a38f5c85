#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include <omp.h>

#include "biasaudit/gray_image.hpp"
#include "biasaudit/imgproc.hpp"
#include "biasaudit/rng.hpp"
#include "oracles.hpp"

using namespace biasaudit;
using imgproc::ResizeMethod;

namespace {

GrayImage random_image(int w, int h, std::uint64_t seed) {
    GrayImage img(w, h);
    Rng rng(seed);
    for (double& v : img.pixels) v = rng.next_double();
    return img;
}

BinaryMask random_mask(int w, int h, double density, std::uint64_t seed) {
    BinaryMask m(w, h);
    Rng rng(seed);
    for (auto& b : m.bits) b = rng.next_double() < density ? 1 : 0;
    return m;
}

bool same_pixels(const GrayImage& a, const GrayImage& b) {
    return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
}

double max_pixel_diff(const GrayImage& a, const GrayImage& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

void check_range01(const GrayImage& img) {
    for (double v : img.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

// --- independent resize oracle -----------------------------------------
// Brute-force resampler written from the stated convention:
// src = (dst + 0.5) * in/out - 0.5, clamp-to-edge taps, Keys a=-0.5 cubic.

double orc_tap(const GrayImage& img, int x, int y) {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    return img.at(x, y);
}

double orc_cubic_w(double t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.0 - 2.5 * t * t + 1.5 * t * t * t;
    if (t < 2.0) return 2.0 - 4.0 * t + 2.5 * t * t - 0.5 * t * t * t;
    return 0.0;
}

GrayImage oracle_resize(const GrayImage& img, int w, int h, ResizeMethod method) {
    GrayImage out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double sx = (x + 0.5) * img.width / w - 0.5;
            const double sy = (y + 0.5) * img.height / h - 0.5;
            double v = 0.0;
            if (method == ResizeMethod::Nearest) {
                const int ix = std::clamp(static_cast<int>(std::floor(sx + 0.5)), 0, img.width - 1);
                const int iy = std::clamp(static_cast<int>(std::floor(sy + 0.5)), 0, img.height - 1);
                v = img.at(ix, iy);
            } else if (method == ResizeMethod::Bilinear) {
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                v = (1 - fy) * ((1 - fx) * orc_tap(img, x0, y0) + fx * orc_tap(img, x0 + 1, y0)) +
                    fy * ((1 - fx) * orc_tap(img, x0, y0 + 1) + fx * orc_tap(img, x0 + 1, y0 + 1));
            } else {
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                for (int j = -1; j <= 2; ++j)
                    for (int i = -1; i <= 2; ++i)
                        v += orc_cubic_w(sx - (x0 + i)) * orc_cubic_w(sy - (y0 + j)) *
                             orc_tap(img, x0 + i, y0 + j);
            }
            out.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

// --- independent blur oracle --------------------------------------------
// Normalized Gaussian taps truncated at ceil(3*sigma), reflecting without
// repeating the border sample (… 2 1 | 0 1 2 …).

int orc_reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

std::vector<double> orc_gauss_kernel(double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k.push_back(std::exp(-0.5 * i * i / (sigma * sigma)));
        sum += k.back();
    }
    for (double& w : k) w /= sum;
    return k;
}

GrayImage oracle_blur(const GrayImage& img, double sigma) {
    const auto k = orc_gauss_kernel(sigma);
    const int r = (static_cast<int>(k.size()) - 1) / 2;
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j)
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(j + r)] * k[static_cast<std::size_t>(i + r)] *
                           img.at(orc_reflect(x + i, img.width), orc_reflect(y + j, img.height));
            out.at(x, y) = std::clamp(acc, 0.0, 1.0);
        }
    return out;
}

// --- independent CLAHE oracle --------------------------------------------
// Per-pixel reference following the documented construction: lround tile
// bounds, absolute clip with uniform excess redistribution, per-tile cdf
// mapping (bins below a tile's first occupied bin pin to 0 so every LUT is
// a valid intensity map), bilinear blend between the four nearest tile
// centers.

std::array<double, 256> orc_tile_lut(const GrayImage& img, int x0, int x1, int y0, int y1,
                                     double clip) {
    std::array<double, 256> hist{};
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const int b = std::min(255, static_cast<int>(img.at(x, y) * 256.0));
            hist[static_cast<std::size_t>(b)] += 1.0;
        }
    double excess = 0.0;
    for (double& h : hist)
        if (h > clip) {
            excess += h - clip;
            h = clip;
        }
    for (double& h : hist) h += excess / 256.0;

    std::array<double, 256> lut{};
    double total = 0.0;
    for (double h : hist) total += h;
    double cdf = 0.0, cdf_min = 0.0;
    bool seen = false;
    for (int b = 0; b < 256; ++b) {
        cdf += hist[static_cast<std::size_t>(b)];
        if (!seen && hist[static_cast<std::size_t>(b)] > 0.0) {
            cdf_min = cdf;
            seen = true;
        }
        lut[static_cast<std::size_t>(b)] = cdf;
    }
    if (!seen || total - cdf_min <= 0.0) {
        for (int b = 0; b < 256; ++b) lut[static_cast<std::size_t>(b)] = b / 255.0;
        return lut;
    }
    for (int b = 0; b < 256; ++b)
        lut[static_cast<std::size_t>(b)] =
            std::clamp((lut[static_cast<std::size_t>(b)] - cdf_min) / (total - cdf_min), 0.0, 1.0);
    return lut;
}

GrayImage oracle_clahe(const GrayImage& img, double clip, int tx, int ty) {
    std::vector<int> xb(static_cast<std::size_t>(tx) + 1), yb(static_cast<std::size_t>(ty) + 1);
    for (int i = 0; i <= tx; ++i)
        xb[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(1.0 * i * img.width / tx));
    for (int i = 0; i <= ty; ++i)
        yb[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(1.0 * i * img.height / ty));

    std::vector<std::array<double, 256>> luts;
    std::vector<double> cx, cy;
    for (int j = 0; j < ty; ++j)
        for (int i = 0; i < tx; ++i)
            luts.push_back(orc_tile_lut(img, xb[static_cast<std::size_t>(i)],
                                        xb[static_cast<std::size_t>(i) + 1],
                                        yb[static_cast<std::size_t>(j)],
                                        yb[static_cast<std::size_t>(j) + 1], clip));
    for (int i = 0; i < tx; ++i)
        cx.push_back((xb[static_cast<std::size_t>(i)] + xb[static_cast<std::size_t>(i) + 1] - 1) / 2.0);
    for (int j = 0; j < ty; ++j)
        cy.push_back((yb[static_cast<std::size_t>(j)] + yb[static_cast<std::size_t>(j) + 1] - 1) / 2.0);

    auto locate = [](const std::vector<double>& centers, double p, int& t, double& f) {
        const int n = static_cast<int>(centers.size());
        if (n == 1) {
            t = 0;
            f = 0.0;
            return;
        }
        t = 0;
        while (t + 2 < n && centers[static_cast<std::size_t>(t) + 1] <= p) ++t;
        f = std::clamp((p - centers[static_cast<std::size_t>(t)]) /
                           (centers[static_cast<std::size_t>(t) + 1] - centers[static_cast<std::size_t>(t)]),
                       0.0, 1.0);
    };

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int sx, sy;
            double fx, fy;
            locate(cx, x, sx, fx);
            locate(cy, y, sy, fy);
            const int sx1 = std::min(sx + 1, tx - 1), sy1 = std::min(sy + 1, ty - 1);
            const int b = std::min(255, static_cast<int>(img.at(x, y) * 256.0));
            auto at = [&](int j, int i) { return luts[static_cast<std::size_t>(j) * tx + i][static_cast<std::size_t>(b)]; };
            const double top = (1 - fx) * at(sy, sx) + fx * at(sy, sx1);
            const double bot = (1 - fx) * at(sy1, sx) + fx * at(sy1, sx1);
            out.at(x, y) = (1 - fy) * top + fy * bot;
        }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// resize

TEST_CASE("resize to own size is the identity for every method") {
    const GrayImage img = random_image(13, 9, 42);
    for (auto m : {ResizeMethod::Nearest, ResizeMethod::Bilinear, ResizeMethod::Bicubic})
        CHECK(same_pixels(imgproc::resize(img, 13, 9, m), img));
}

TEST_CASE("resize preserves constants bit-exactly") {
    GrayImage img(8, 6);
    for (double& v : img.pixels) v = 0.37;
    for (auto m : {ResizeMethod::Nearest, ResizeMethod::Bilinear, ResizeMethod::Bicubic}) {
        const GrayImage out = imgproc::resize(img, 21, 5, m);
        for (double v : out.pixels) CHECK(v == 0.37);
    }
}

TEST_CASE("4x4 ramp downsampled to 2x2 bilinear matches the brute-force oracle") {
    GrayImage img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(x, y) = (4 * y + x) / 15.0;
    const GrayImage got = imgproc::resize(img, 2, 2, ResizeMethod::Bilinear);
    const GrayImage want = oracle_resize(img, 2, 2, ResizeMethod::Bilinear);
    CHECK(max_pixel_diff(got, want) <= 1e-15);
    // Source centers fall at (0.5,0.5) etc., so each output is a 4-pixel mean.
    CHECK(got.at(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("resize agrees with the oracle on random images at many shapes") {
    const GrayImage img = random_image(17, 11, 7);
    const std::array<std::pair<int, int>, 4> shapes{{{5, 3}, {34, 22}, {17, 30}, {64, 7}}};
    for (auto m : {ResizeMethod::Nearest, ResizeMethod::Bilinear, ResizeMethod::Bicubic})
        for (auto [w, h] : shapes) {
            const GrayImage got = imgproc::resize(img, w, h, m);
            const GrayImage want = oracle_resize(img, w, h, m);
            CHECK(max_pixel_diff(got, want) <= 1e-12);
            check_range01(got);
        }
}

TEST_CASE("resize rejects non-positive targets") {
    const GrayImage img = random_image(4, 4, 1);
    CHECK_THROWS_AS(imgproc::resize(img, 0, 4, ResizeMethod::Bilinear), ParamError);
    CHECK_THROWS_AS(imgproc::resize(img, 4, -1, ResizeMethod::Nearest), ParamError);
}

// ---------------------------------------------------------------------------
// hist_eq

TEST_CASE("hist_eq matches the direct cdf oracle") {
    const GrayImage img = random_image(64, 48, 11);
    const GrayImage got = imgproc::hist_eq(img);
    const GrayImage want = oracle::hist_eq_direct(img);
    CHECK(max_pixel_diff(got, want) <= 1e-15);
    check_range01(got);
}

TEST_CASE("hist_eq leaves constants unchanged") {
    GrayImage img(5, 5);
    for (double& v : img.pixels) v = 0.42;
    CHECK(same_pixels(imgproc::hist_eq(img), img));
}

TEST_CASE("hist_eq keeps an already maximally spread pair") {
    GrayImage img(2, 1);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 1.0;
    const GrayImage out = imgproc::hist_eq(img);
    CHECK(out.at(0, 0) == 0.0);
    CHECK(out.at(1, 0) == 1.0);
}

TEST_CASE("hist_eq flattens a full 256-level ramp to one count per bin") {
    GrayImage img(256, 1);
    for (int x = 0; x < 256; ++x) img.at(x, 0) = x / 255.0;
    const GrayImage out = imgproc::hist_eq(img);
    std::array<int, 256> hist{};
    for (double v : out.pixels)
        hist[static_cast<std::size_t>(std::min(255, static_cast<int>(v * 256.0)))]++;
    for (int c : hist) CHECK(c == 1);
}

TEST_CASE("hist_eq is idempotent up to one quantization step") {
    const GrayImage img = random_image(32, 32, 13);
    const GrayImage once = imgproc::hist_eq(img);
    const GrayImage twice = imgproc::hist_eq(once);
    CHECK(max_pixel_diff(once, twice) <= 1.0 / 255.0 + 1e-12);
}

// ---------------------------------------------------------------------------
// clahe

TEST_CASE("clahe with one tile and inactive clip equals hist_eq bit-exactly") {
    const GrayImage img = random_image(40, 30, 17);
    const double n = static_cast<double>(img.size());
    const GrayImage got = imgproc::clahe(img, n, 1, 1);
    CHECK(same_pixels(got, imgproc::hist_eq(img)));
}

TEST_CASE("clahe leaves constants unchanged") {
    GrayImage img(16, 16);
    for (double& v : img.pixels) v = 0.6;
    CHECK(same_pixels(imgproc::clahe(img, 2.0, 4, 4), img));
}

TEST_CASE("clahe matches the per-tile reference on a two-region image") {
    GrayImage img(64, 64);
    Rng rng(23);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const double base = x < 32 ? 0.25 : 0.7;
            img.at(x, y) = std::clamp(base + rng.next_double(-0.1, 0.1), 0.0, 1.0);
        }
    const GrayImage got = imgproc::clahe(img, 40.0, 2, 2);
    const GrayImage want = oracle_clahe(img, 40.0, 2, 2);
    CHECK(max_pixel_diff(got, want) <= 1.0 / 255.0);
    check_range01(got);
}

TEST_CASE("clahe agrees with the reference across tile grids and clips") {
    const GrayImage img = random_image(50, 37, 29);
    for (auto [tx, ty] : std::array<std::pair<int, int>, 3>{{{2, 2}, {3, 5}, {8, 8}}})
        for (double clip : {2.0, 10.0, 1000.0}) {
            const GrayImage got = imgproc::clahe(img, clip, tx, ty);
            CHECK(max_pixel_diff(got, oracle_clahe(img, clip, tx, ty)) <= 1.0 / 255.0);
        }
}

TEST_CASE("clahe validates its parameters") {
    const GrayImage img = random_image(8, 8, 3);
    CHECK_THROWS_AS(imgproc::clahe(img, 4.0, 0, 2), ParamError);
    CHECK_THROWS_AS(imgproc::clahe(img, 0.0, 2, 2), ParamError);
}

// ---------------------------------------------------------------------------
// gamma

TEST_CASE("gamma with G=1 is pixel-identical") {
    const GrayImage img = random_image(9, 9, 31);
    CHECK(same_pixels(imgproc::gamma(img, 1.0), img));
}

TEST_CASE("gamma fixes 0 and 1 and hits the known scalar value") {
    GrayImage img(3, 1);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 1.0;
    img.at(2, 0) = 0.25;
    const GrayImage out = imgproc::gamma(img, 1.5);
    CHECK(out.at(0, 0) == 0.0);
    CHECK(out.at(1, 0) == 1.0);
    // 0.25^(1/1.5) = 2^(-4/3)
    CHECK(out.at(2, 0) == doctest::Approx(std::exp2(-4.0 / 3.0)).epsilon(1e-12));
    CHECK(out.at(2, 0) == doctest::Approx(0.39685).epsilon(1e-4));
}

TEST_CASE("gamma is monotone and preserves the argmax location") {
    const GrayImage img = random_image(12, 10, 37);
    const GrayImage out = imgproc::gamma(img, 2.3);
    for (std::size_t i = 0; i + 1 < img.size(); ++i)
        for (std::size_t j = i + 1; j < img.size(); ++j)
            if (img.pixels[i] <= img.pixels[j]) CHECK(out.pixels[i] <= out.pixels[j]);
    const auto am_in = std::max_element(img.pixels.begin(), img.pixels.end()) - img.pixels.begin();
    const auto am_out = std::max_element(out.pixels.begin(), out.pixels.end()) - out.pixels.begin();
    CHECK(am_in == am_out);
}

TEST_CASE("gamma rejects non-positive G") {
    const GrayImage img = random_image(2, 2, 1);
    CHECK_THROWS_AS(imgproc::gamma(img, 0.0), ParamError);
    CHECK_THROWS_AS(imgproc::gamma(img, -1.5), ParamError);
}

// ---------------------------------------------------------------------------
// gaussian_blur

TEST_CASE("impulse response is normalized and truncated at ceil(3 sigma)") {
    for (double sigma : {0.4, 1.0, 2.7}) {
        const int r = static_cast<int>(std::ceil(3.0 * sigma));
        const int n = 4 * r + 9, c = n / 2; // impulse support stays clear of the borders
        GrayImage img(n, n);
        img.at(c, c) = 1.0;
        const GrayImage out = imgproc::gaussian_blur(img, sigma);
        double sum = 0.0;
        for (double v : out.pixels) sum += v;
        CHECK(std::abs(sum - 1.0) <= 1e-9); // (sum of 1-D weights)^2 == 1
        CHECK(out.at(c + r, c) > 0.0);      // support radius is exactly ceil(3 sigma)
        CHECK(out.at(c + r + 1, c) == 0.0);
        CHECK(out.at(c, c + r) > 0.0);
        CHECK(out.at(c, c + r + 1) == 0.0);
    }
}

TEST_CASE("blurring a constant returns the constant") {
    GrayImage img(19, 7);
    for (double& v : img.pixels) v = 0.81;
    const GrayImage out = imgproc::gaussian_blur(img, 1.7);
    CHECK(max_pixel_diff(out, img) <= 1e-12);
}

TEST_CASE("impulse response samples the analytic kernel") {
    const double sigma = 1.3;
    const int n = 31, c = n / 2;
    GrayImage img(n, n);
    img.at(c, c) = 1.0;
    const GrayImage out = imgproc::gaussian_blur(img, sigma);
    const auto k = orc_gauss_kernel(sigma);
    const int r = (static_cast<int>(k.size()) - 1) / 2;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double want = k[static_cast<std::size_t>(dx + r)] * k[static_cast<std::size_t>(dy + r)];
            CHECK(std::abs(out.at(c + dx, c + dy) - want) <= 1e-6);
        }
    CHECK(out.at(0, 0) == 0.0); // far from the impulse, outside the kernel support
}

TEST_CASE("blur commutes with horizontal mirroring") {
    const GrayImage img = random_image(21, 14, 41);
    const GrayImage a = imgproc::gaussian_blur(imgproc::hflip(img), 1.1);
    const GrayImage b = imgproc::hflip(imgproc::gaussian_blur(img, 1.1));
    CHECK(max_pixel_diff(a, b) <= 1e-12);
}

TEST_CASE("blur rejects non-positive sigma") {
    const GrayImage img = random_image(4, 4, 1);
    CHECK_THROWS_AS(imgproc::gaussian_blur(img, 0.0), ParamError);
}

// ---------------------------------------------------------------------------
// unsharp

TEST_CASE("unsharp with amount 0 is the identity") {
    const GrayImage img = random_image(11, 8, 43);
    CHECK(same_pixels(imgproc::unsharp(img, 1.0, 0.0), img));
}

TEST_CASE("unsharp leaves constants unchanged") {
    GrayImage img(9, 9);
    for (double& v : img.pixels) v = 0.33;
    CHECK(max_pixel_diff(imgproc::unsharp(img, 2.0, 1.5), img) <= 1e-12);
}

TEST_CASE("unsharp on a step edge matches the direct formula with the oracle blur") {
    GrayImage img(32, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 32; ++x) img.at(x, y) = x < 16 ? 0.2 : 0.8;
    const double radius = 1.0, amount = 1.0;
    const GrayImage got = imgproc::unsharp(img, radius, amount);
    const GrayImage blurred = oracle_blur(img, radius);
    bool overshoot = false, undershoot = false;
    for (int x = 0; x < 32; ++x) {
        const double want =
            std::clamp(img.at(x, 2) + amount * (img.at(x, 2) - blurred.at(x, 2)), 0.0, 1.0);
        CHECK(std::abs(got.at(x, 2) - want) <= 1e-12);
        if (got.at(x, 2) > 0.8 + 1e-9) overshoot = true;
        if (got.at(x, 2) < 0.2 - 1e-9) undershoot = true;
    }
    CHECK(overshoot);
    CHECK(undershoot);
}

// ---------------------------------------------------------------------------
// dilate

TEST_CASE("dilate keeps all-zero and all-one masks fixed") {
    BinaryMask zero(10, 10);
    const BinaryMask dz = imgproc::dilate(zero, 3.0);
    CHECK(dz.bits == zero.bits);

    BinaryMask one(10, 10);
    for (auto& b : one.bits) b = 1;
    const BinaryMask d1 = imgproc::dilate(one, 3.0);
    CHECK(d1.bits == one.bits);
}

TEST_CASE("a single pixel dilates to the exact Euclidean disk") {
    BinaryMask m(15, 15);
    m.at(7, 7) = 1;
    const BinaryMask out = imgproc::dilate(m, 2.0);
    for (int y = 0; y < 15; ++y)
        for (int x = 0; x < 15; ++x) {
            const int dx = x - 7, dy = y - 7;
            const bool inside = dx * dx + dy * dy <= 4;
            CHECK(out.at(x, y) == (inside ? 1 : 0));
        }
}

TEST_CASE("dilate radius 0 is the identity") {
    const BinaryMask m = random_mask(12, 9, 0.3, 47);
    CHECK(imgproc::dilate(m, 0.0).bits == m.bits);
}

TEST_CASE("dilate matches the brute-force distance oracle on random masks") {
    const BinaryMask m = random_mask(24, 18, 0.08, 53);
    for (double r : {1.0, 2.5, 4.0}) {
        const BinaryMask out = imgproc::dilate(m, r);
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                CHECK(static_cast<bool>(out.at(x, y)) == oracle::dilated_contains(m, r, x, y));
    }
}

TEST_CASE("dilate is monotone in both mask and radius") {
    const BinaryMask small = random_mask(20, 20, 0.05, 59);
    BinaryMask big = small;
    Rng rng(61);
    for (auto& b : big.bits)
        if (rng.next_double() < 0.05) b = 1;

    const BinaryMask ds = imgproc::dilate(small, 2.0);
    const BinaryMask db = imgproc::dilate(big, 2.0);
    for (std::size_t i = 0; i < ds.bits.size(); ++i)
        if (ds.bits[i]) CHECK(db.bits[i] == 1);

    const BinaryMask d3 = imgproc::dilate(small, 3.0);
    for (std::size_t i = 0; i < ds.bits.size(); ++i)
        if (ds.bits[i]) CHECK(d3.bits[i] == 1);
}

// ---------------------------------------------------------------------------
// apply_mask / threshold / to_gray / hflip

TEST_CASE("apply_mask identity, annihilation, and checkerboard selection") {
    const GrayImage img = random_image(8, 8, 67);
    BinaryMask ones(8, 8), zeros(8, 8), checker(8, 8);
    for (auto& b : ones.bits) b = 1;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) checker.at(x, y) = (x + y) % 2;

    CHECK(same_pixels(imgproc::apply_mask(img, ones), img));
    for (double v : imgproc::apply_mask(img, zeros).pixels) CHECK(v == 0.0);

    const GrayImage sel = imgproc::apply_mask(img, checker);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            CHECK(sel.at(x, y) == ((x + y) % 2 ? img.at(x, y) : 0.0));

    // Idempotence.
    CHECK(same_pixels(imgproc::apply_mask(sel, checker), sel));
}

TEST_CASE("apply_mask rejects mismatched shapes") {
    const GrayImage img = random_image(8, 8, 1);
    BinaryMask m(7, 8);
    CHECK_THROWS_AS(imgproc::apply_mask(img, m), ShapeError);
}

TEST_CASE("threshold uses >= and round-trips through to_gray") {
    GrayImage img(3, 1);
    img.at(0, 0) = 0.499999;
    img.at(1, 0) = 0.5;
    img.at(2, 0) = 0.500001;
    const BinaryMask m = imgproc::threshold(img, 0.5);
    CHECK(m.at(0, 0) == 0);
    CHECK(m.at(1, 0) == 1);
    CHECK(m.at(2, 0) == 1);

    const BinaryMask rnd = random_mask(9, 4, 0.4, 71);
    CHECK(imgproc::threshold(imgproc::to_gray(rnd), 0.5).bits == rnd.bits);
}

TEST_CASE("hflip reverses rows and is an involution") {
    const GrayImage img = random_image(7, 3, 73);
    const GrayImage f = imgproc::hflip(img);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 7; ++x) CHECK(f.at(x, y) == img.at(6 - x, y));
    CHECK(same_pixels(imgproc::hflip(f), img));
}

// ---------------------------------------------------------------------------
// upscale

TEST_CASE("upscale factor 1 is the identity") {
    const GrayImage img = random_image(6, 6, 79);
    CHECK(same_pixels(imgproc::upscale(img, 1), img));
}

TEST_CASE("upscale preserves constants") {
    GrayImage img(5, 4);
    for (double& v : img.pixels) v = 0.55;
    for (double v : imgproc::upscale(img, 3).pixels) CHECK(v == 0.55);
}

TEST_CASE("upscale x2 reproduces a linear ramp within 1e-3") {
    // Bicubic interpolation reproduces linear functions; the border rule
    // extrapolates the boundary slope so the plane continues past the edge.
    const int n = 16;
    GrayImage img(n, n);
    auto plane = [&](double x, double y) { return 0.1 + 0.4 * x / (2 * n - 1) + 0.35 * y / (2 * n - 1); };
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) img.at(x, y) = plane(2 * x + 0.5, 2 * y + 0.5);
    const GrayImage up = imgproc::upscale(img, 2);
    REQUIRE(up.width == 2 * n);
    double max_err = 0.0;
    for (int y = 0; y < 2 * n; ++y)
        for (int x = 0; x < 2 * n; ++x)
            max_err = std::max(max_err, std::abs(up.at(x, y) - plane(x, y)));
    CHECK(max_err <= 1e-3);
}

TEST_CASE("upscale rejects factor < 1") {
    const GrayImage img = random_image(4, 4, 1);
    CHECK_THROWS_AS(imgproc::upscale(img, 0), ParamError);
}

// ---------------------------------------------------------------------------
// apply_recipe

TEST_CASE("empty recipe is the identity") {
    const GrayImage img = random_image(10, 10, 83);
    CHECK(same_pixels(imgproc::apply_recipe(img, {}), img));
}

TEST_CASE("recipes compose left to right") {
    const GrayImage img = random_image(16, 16, 89);
    imgproc::AugmentRecipe recipe{imgproc::HistEqStep{}, imgproc::GammaStep{1.5}};
    const GrayImage got = imgproc::apply_recipe(img, recipe);
    const GrayImage want = imgproc::gamma(imgproc::hist_eq(img), 1.5);
    CHECK(same_pixels(got, want));
}

TEST_CASE("recipe order matters on a generic image") {
    GrayImage img(8, 8);
    Rng rng(97);
    for (double& v : img.pixels) v = rng.next_double(0.05, 0.95);
    const GrayImage eq_then_gamma =
        imgproc::apply_recipe(img, {imgproc::HistEqStep{}, imgproc::GammaStep{1.5}});
    const GrayImage gamma_then_eq =
        imgproc::apply_recipe(img, {imgproc::GammaStep{1.5}, imgproc::HistEqStep{}});
    CHECK_FALSE(same_pixels(eq_then_gamma, gamma_then_eq));
}

// ---------------------------------------------------------------------------
// preprocess_stage2

TEST_CASE("stage2 with an all-one mask and empty recipe is the identity") {
    const GrayImage img = random_image(48, 48, 101);
    imgproc::PipelineConfig cfg;
    cfg.mask_size = 32;
    BinaryMask mask(32, 32);
    for (auto& b : mask.bits) b = 1;
    const GrayImage out = imgproc::preprocess_stage2(img, mask, cfg);
    CHECK(same_pixels(out, img));
}

TEST_CASE("stage2 passthrough policy skips masking and applies the recipe") {
    const GrayImage img = random_image(20, 20, 103);
    imgproc::PipelineConfig cfg;
    cfg.missing_mask_policy = imgproc::PipelineConfig::MissingMask::Passthrough;
    cfg.recipe = {imgproc::GammaStep{1.5}};
    const GrayImage out = imgproc::preprocess_stage2(img, std::nullopt, cfg);
    CHECK(same_pixels(out, imgproc::gamma(img, 1.5)));
}

TEST_CASE("stage2 error policy rejects a missing mask") {
    const GrayImage img = random_image(8, 8, 1);
    imgproc::PipelineConfig cfg;
    cfg.missing_mask_policy = imgproc::PipelineConfig::MissingMask::Error;
    CHECK_THROWS_AS(imgproc::preprocess_stage2(img, std::nullopt, cfg), ValidationError);
}

TEST_CASE("stage2 rejects a mask whose shape disagrees with mask_size") {
    const GrayImage img = random_image(8, 8, 1);
    imgproc::PipelineConfig cfg;
    cfg.mask_size = 32;
    BinaryMask mask(16, 16);
    CHECK_THROWS_AS(imgproc::preprocess_stage2(img, mask, cfg), ShapeError);
}

TEST_CASE("stage2 equals the step-by-step composition on a disk mask") {
    const GrayImage img = random_image(96, 96, 107);
    const int ms = 32;
    BinaryMask mask(ms, ms);
    for (int y = 0; y < ms; ++y)
        for (int x = 0; x < ms; ++x) {
            const double dx = x - 15.5, dy = y - 15.5;
            mask.at(x, y) = dx * dx + dy * dy <= 8.0 * 8.0 ? 1 : 0;
        }
    imgproc::PipelineConfig cfg;
    cfg.mask_size = ms;
    cfg.upscale_factor = 4;
    cfg.dilate_radius = 3.0;

    const GrayImage got = imgproc::preprocess_stage2(img, mask, cfg);

    const GrayImage up = imgproc::upscale(imgproc::to_gray(mask), 4);
    const GrayImage fitted = imgproc::resize(up, 96, 96, ResizeMethod::Bicubic);
    const BinaryMask full = imgproc::dilate(imgproc::threshold(fitted, 0.5), 3.0);
    const GrayImage want = imgproc::apply_mask(img, full);
    CHECK(same_pixels(got, want));

    // Zero outside the dilated disk, original values inside.
    bool any_zeroed = false, any_kept = false;
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (full.bits[i]) {
            CHECK(got.pixels[i] == img.pixels[i]);
            any_kept = true;
        } else {
            CHECK(got.pixels[i] == 0.0);
            any_zeroed = true;
        }
    }
    CHECK(any_kept);
    CHECK(any_zeroed);
}

// ---------------------------------------------------------------------------
// random_augment

TEST_CASE("random_augment with zero rotation and flip probability is the identity") {
    const GrayImage img = random_image(14, 14, 109);
    CHECK(same_pixels(imgproc::random_augment(img, 0.0, 0.0, 5), img));
}

TEST_CASE("a forced flip applied twice restores the image") {
    const GrayImage img = random_image(13, 9, 113);
    const GrayImage once = imgproc::random_augment(img, 0.0, 1.0, 5);
    CHECK(same_pixels(once, imgproc::hflip(img)));
    const GrayImage twice = imgproc::random_augment(once, 0.0, 1.0, 99);
    CHECK(same_pixels(twice, img));
}

TEST_CASE("random_augment is deterministic under the seed") {
    const GrayImage img = random_image(24, 24, 127);
    const GrayImage a = imgproc::random_augment(img, 15.0, 0.5, 77);
    const GrayImage b = imgproc::random_augment(img, 15.0, 0.5, 77);
    CHECK(same_pixels(a, b));
    const GrayImage c = imgproc::random_augment(img, 15.0, 0.5, 78);
    CHECK_FALSE(same_pixels(a, c));
    check_range01(a);
}

TEST_CASE("rotating a constant image changes nothing") {
    GrayImage img(17, 17);
    for (double& v : img.pixels) v = 0.77;
    const GrayImage out = imgproc::random_augment(img, 30.0, 0.0, 3);
    CHECK(max_pixel_diff(out, img) <= 1e-12);
}

TEST_CASE("random_augment validates its parameters") {
    const GrayImage img = random_image(4, 4, 1);
    CHECK_THROWS_AS(imgproc::random_augment(img, 10.0, 1.5, 1), ParamError);
    CHECK_THROWS_AS(imgproc::random_augment(img, -1.0, 0.5, 1), ParamError);
}

// ---------------------------------------------------------------------------
// range preservation across the board

TEST_CASE("every operation maps [0,1] into [0,1]") {
    const GrayImage img = random_image(33, 27, 131);
    check_range01(imgproc::hist_eq(img));
    check_range01(imgproc::clahe(img, 4.0, 3, 3));
    check_range01(imgproc::gamma(img, 0.4));
    check_range01(imgproc::gaussian_blur(img, 2.2));
    check_range01(imgproc::unsharp(img, 1.0, 3.0));
    check_range01(imgproc::upscale(img, 2));
    check_range01(imgproc::apply_recipe(
        img, {imgproc::ClaheStep{}, imgproc::UnsharpStep{}, imgproc::GammaStep{0.7},
              imgproc::HistEqStep{}}));
}

// ---------------------------------------------------------------------------
// serial reference implementations and thread-count invariance

TEST_CASE("serial kernels agree with the parallel ones") {
    const GrayImage img = random_image(45, 38, 137);

    SUBCASE("resize is bit-identical") {
        for (auto m : {ResizeMethod::Nearest, ResizeMethod::Bilinear, ResizeMethod::Bicubic}) {
            CHECK(same_pixels(imgproc::serial::resize(img, 20, 30, m),
                              imgproc::resize(img, 20, 30, m)));
            CHECK(same_pixels(imgproc::serial::resize(img, 90, 76, m),
                              imgproc::resize(img, 90, 76, m)));
        }
    }
    SUBCASE("hist_eq is bit-identical") {
        CHECK(same_pixels(imgproc::serial::hist_eq(img), imgproc::hist_eq(img)));
    }
    SUBCASE("clahe is bit-identical") {
        CHECK(same_pixels(imgproc::serial::clahe(img, 6.0, 4, 3), imgproc::clahe(img, 6.0, 4, 3)));
    }
    SUBCASE("direct 2-D blur matches the separable one within 1e-12") {
        CHECK(max_pixel_diff(imgproc::serial::gaussian_blur(img, 1.4),
                             imgproc::gaussian_blur(img, 1.4)) <= 1e-12);
    }
    SUBCASE("naive dilate equals the span-table dilate") {
        const BinaryMask m = random_mask(40, 33, 0.07, 139);
        for (double r : {0.0, 2.0, 4.5})
            CHECK(imgproc::serial::dilate(m, r).bits == imgproc::dilate(m, r).bits);
    }
}

TEST_CASE("parallel results do not depend on the thread count") {
    const GrayImage img = random_image(64, 41, 149);
    const int saved = omp_get_max_threads();

    omp_set_num_threads(1);
    const GrayImage r1 = imgproc::resize(img, 37, 53, ResizeMethod::Bicubic);
    const GrayImage e1 = imgproc::hist_eq(img);
    const GrayImage c1 = imgproc::clahe(img, 5.0, 3, 4);
    const GrayImage b1 = imgproc::gaussian_blur(img, 1.9);

    omp_set_num_threads(4);
    const GrayImage r4 = imgproc::resize(img, 37, 53, ResizeMethod::Bicubic);
    const GrayImage e4 = imgproc::hist_eq(img);
    const GrayImage c4 = imgproc::clahe(img, 5.0, 3, 4);
    const GrayImage b4 = imgproc::gaussian_blur(img, 1.9);

    omp_set_num_threads(saved);

    CHECK(same_pixels(r1, r4));
    CHECK(same_pixels(e1, e4));
    CHECK(same_pixels(c1, c4));
    CHECK(same_pixels(b1, b4));
}
