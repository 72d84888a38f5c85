#include "biasaudit/imgproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "biasaudit/errors.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::imgproc {

namespace {

constexpr int kBins = 256;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

bool is_constant(const GrayImage& img) {
    for (double v : img.pixels)
        if (v != img.pixels[0]) return false;
    return true;
}

int bin256(double v) {
    const int b = static_cast<int>(v * kBins);
    return std::min(kBins - 1, std::max(0, b));
}

// Reflection without repeating the edge sample: -1 -> 1, n -> n-2.
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

// Keys cubic convolution kernel, a = -0.5.
double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

enum class Border { Clamp, Extrapolate };

// 1-D tap with the border rule. Extrapolation continues the boundary
// slope so linear data stays linear.
template <typename Get>
double tap(Get&& get, int i, int n, Border border) {
    if (i >= 0 && i < n) return get(i);
    if (n == 1) return get(0);
    if (border == Border::Clamp) return get(std::min(n - 1, std::max(0, i)));
    if (i < 0) return get(0) + static_cast<double>(i) * (get(1) - get(0));
    return get(n - 1) + static_cast<double>(i - (n - 1)) * (get(n - 1) - get(n - 2));
}

// Interpolations are written in difference form (v0 + w*(v1-v0)) so a
// constant input reproduces the constant bit-exactly.
template <typename Get>
double interp_linear_1d(Get&& get, double s, int n, Border border) {
    const int i0 = static_cast<int>(std::floor(s));
    const double f = s - i0;
    const double v0 = tap(get, i0, n, border);
    const double v1 = tap(get, i0 + 1, n, border);
    return v0 + f * (v1 - v0);
}

template <typename Get>
double interp_cubic_1d(Get&& get, double s, int n, Border border) {
    const int i0 = static_cast<int>(std::floor(s));
    const double t = s - i0;
    const double c = tap(get, i0, n, border);
    const double wm1 = cubic_weight(t + 1.0);
    const double w1 = cubic_weight(1.0 - t);
    const double w2 = cubic_weight(2.0 - t);
    return c + wm1 * (tap(get, i0 - 1, n, border) - c) + w1 * (tap(get, i0 + 1, n, border) - c) +
           w2 * (tap(get, i0 + 2, n, border) - c);
}

double sample_bicubic(const GrayImage& img, double sx, double sy, Border border) {
    const int iy0 = static_cast<int>(std::floor(sy));
    std::array<double, 4> rows{};
    for (int k = -1; k <= 2; ++k) {
        const int ry = iy0 + k;
        rows[static_cast<std::size_t>(k + 1)] = tap(
            [&](int yy) {
                return interp_cubic_1d([&](int xx) { return img.at(xx, yy); }, sx, img.width,
                                       border);
            },
            ry, img.height, border);
    }
    const double t = sy - iy0;
    const double c = rows[1];
    return c + cubic_weight(t + 1.0) * (rows[0] - c) + cubic_weight(1.0 - t) * (rows[2] - c) +
           cubic_weight(2.0 - t) * (rows[3] - c);
}

double sample_bilinear(const GrayImage& img, double sx, double sy, Border border) {
    return interp_linear_1d(
        [&](int yy) {
            return interp_linear_1d([&](int xx) { return img.at(xx, yy); }, sx, img.width, border);
        },
        sy, img.height, border);
}

double sample_bilinear_reflect(const GrayImage& img, double sx, double sy) {
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0;
    const double fy = sy - y0;
    auto px = [&](int x, int y) {
        return img.at(reflect_index(x, img.width), reflect_index(y, img.height));
    };
    const double top = px(x0, y0) + fx * (px(x0 + 1, y0) - px(x0, y0));
    const double bot = px(x0, y0 + 1) + fx * (px(x0 + 1, y0 + 1) - px(x0, y0 + 1));
    return top + fy * (bot - top);
}

// One output pixel of a resample; shared by the parallel and serial
// versions so they stay bit-identical.
double resample_pixel(const GrayImage& img, int x, int y, double scale_x, double scale_y,
                      ResizeMethod method, Border border) {
    switch (method) {
    case ResizeMethod::Nearest: {
        const int ix = std::min(img.width - 1,
                                std::max(0, static_cast<int>(std::floor((x + 0.5) * scale_x))));
        const int iy = std::min(img.height - 1,
                                std::max(0, static_cast<int>(std::floor((y + 0.5) * scale_y))));
        return img.at(ix, iy);
    }
    case ResizeMethod::Bilinear:
        return clamp01(sample_bilinear(img, (x + 0.5) * scale_x - 0.5, (y + 0.5) * scale_y - 0.5,
                                       border));
    default:
        return clamp01(sample_bicubic(img, (x + 0.5) * scale_x - 0.5, (y + 0.5) * scale_y - 0.5,
                                      border));
    }
}

GrayImage resample(const GrayImage& img, int w, int h, ResizeMethod method, Border border) {
    if (w < 1 || h < 1) throw ParamError("resize target dimensions must be >= 1");
    GrayImage out(w, h);
    const double scale_x = static_cast<double>(img.width) / w;
    const double scale_y = static_cast<double>(img.height) / h;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = resample_pixel(img, x, y, scale_x, scale_y, method, border);
    return out;
}

// Equalization LUT shared by hist_eq and clahe: bin counts in, output
// level per bin out. Real-valued counts so clipped histograms reuse it.
// A single-occupied-bin histogram degenerates; the caller handles that.
struct EqLut {
    std::array<double, kBins> map{};
    bool degenerate = false;
};

EqLut build_eq_lut(const std::array<double, kBins>& hist) {
    EqLut lut;
    double total = 0.0;
    for (double c : hist) total += c;
    double cdf_min = 0.0;
    bool found = false;
    double cdf = 0.0;
    for (int b = 0; b < kBins; ++b) {
        cdf += hist[b];
        if (!found && hist[b] > 0.0) {
            cdf_min = cdf;
            found = true;
        }
        lut.map[static_cast<std::size_t>(b)] = cdf;
    }
    const double denom = total - cdf_min;
    if (!found || denom <= 0.0) {
        // All mass in one bin: identity-like fallback, callers special-case
        // whole-image constants before we get here.
        for (int b = 0; b < kBins; ++b)
            lut.map[static_cast<std::size_t>(b)] = b / 255.0;
        lut.degenerate = true;
        return lut;
    }
    // Bins below the first occupied one would map negative; they stand
    // for intensities darker than the histogram's coverage (reachable
    // through clahe's neighbor-tile lookups), so pin them to 0.
    for (int b = 0; b < kBins; ++b)
        lut.map[static_cast<std::size_t>(b)] =
            clamp01((lut.map[static_cast<std::size_t>(b)] - cdf_min) / denom);
    return lut;
}

// Equalization LUT for a whole image, or nullopt when the image should
// pass through unchanged (constant or single-occupied-bin input).
std::optional<EqLut> image_eq_lut(const GrayImage& img) {
    if (is_constant(img)) return std::nullopt;
    std::array<double, kBins> hist{};
    for (double v : img.pixels) hist[static_cast<std::size_t>(bin256(v))] += 1.0;
    EqLut lut = build_eq_lut(hist);
    if (lut.degenerate) return std::nullopt;
    return lut;
}

struct ClaheGrid {
    int tx = 1, ty = 1;
    std::vector<int> xb, yb;     // tile boundaries, sizes tx+1 / ty+1
    std::vector<double> cx, cy;  // tile center coordinates
    std::vector<EqLut> luts;     // tx*ty mappings, row-major
};

ClaheGrid build_clahe_grid(const GrayImage& img, double clip, int tiles_x, int tiles_y) {
    ClaheGrid g;
    g.tx = tiles_x;
    g.ty = tiles_y;
    g.xb.resize(static_cast<std::size_t>(tiles_x) + 1);
    g.yb.resize(static_cast<std::size_t>(tiles_y) + 1);
    for (int i = 0; i <= tiles_x; ++i)
        g.xb[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(i) * img.width / tiles_x));
    for (int i = 0; i <= tiles_y; ++i)
        g.yb[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(i) * img.height / tiles_y));
    for (int i = 0; i < tiles_x; ++i)
        g.cx.push_back((g.xb[static_cast<std::size_t>(i)] + g.xb[static_cast<std::size_t>(i) + 1] - 1) / 2.0);
    for (int i = 0; i < tiles_y; ++i)
        g.cy.push_back((g.yb[static_cast<std::size_t>(i)] + g.yb[static_cast<std::size_t>(i) + 1] - 1) / 2.0);

    g.luts.resize(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (int tyi = 0; tyi < tiles_y; ++tyi) {
        for (int txi = 0; txi < tiles_x; ++txi) {
            std::array<double, kBins> hist{};
            for (int y = g.yb[static_cast<std::size_t>(tyi)]; y < g.yb[static_cast<std::size_t>(tyi) + 1]; ++y)
                for (int x = g.xb[static_cast<std::size_t>(txi)]; x < g.xb[static_cast<std::size_t>(txi) + 1]; ++x)
                    hist[static_cast<std::size_t>(bin256(img.at(x, y)))] += 1.0;

            // Clip and spread the excess uniformly, one pass.
            double excess = 0.0;
            for (double& h : hist)
                if (h > clip) {
                    excess += h - clip;
                    h = clip;
                }
            if (excess > 0.0) {
                const double add = excess / kBins;
                for (double& h : hist) h += add;
            }
            g.luts[static_cast<std::size_t>(tyi) * tiles_x + txi] = build_eq_lut(hist);
        }
    }
    return g;
}

// Per-coordinate neighbor-tile index and blend weight.
void blend_tables(const std::vector<double>& centers, int extent, std::vector<int>& idx,
                  std::vector<double>& wgt) {
    const int tiles = static_cast<int>(centers.size());
    idx.resize(static_cast<std::size_t>(extent));
    wgt.resize(static_cast<std::size_t>(extent));
    for (int p = 0; p < extent; ++p) {
        if (tiles == 1) {
            idx[static_cast<std::size_t>(p)] = 0;
            wgt[static_cast<std::size_t>(p)] = 0.0;
            continue;
        }
        int t = 0;
        while (t + 2 < tiles && centers[static_cast<std::size_t>(t) + 1] <= p) ++t;
        const double span = centers[static_cast<std::size_t>(t) + 1] - centers[static_cast<std::size_t>(t)];
        const double w = (p - centers[static_cast<std::size_t>(t)]) / span;
        idx[static_cast<std::size_t>(p)] = t;
        wgt[static_cast<std::size_t>(p)] = std::min(1.0, std::max(0.0, w));
    }
}

// One output pixel of the 4-tile blend; shared by parallel and serial
// clahe so they stay bit-identical.
double clahe_pixel(const GrayImage& img, const ClaheGrid& g, const std::vector<int>& ix,
                   const std::vector<double>& wx, int x, int t0, int t1, double fy, int y) {
    const int s0 = ix[static_cast<std::size_t>(x)];
    const int s1 = std::min(s0 + 1, g.tx - 1);
    const double fx = wx[static_cast<std::size_t>(x)];
    const auto b = static_cast<std::size_t>(bin256(img.at(x, y)));
    const double v00 = g.luts[static_cast<std::size_t>(t0) * g.tx + s0].map[b];
    const double v01 = g.luts[static_cast<std::size_t>(t0) * g.tx + s1].map[b];
    const double v10 = g.luts[static_cast<std::size_t>(t1) * g.tx + s0].map[b];
    const double v11 = g.luts[static_cast<std::size_t>(t1) * g.tx + s1].map[b];
    const double top = v00 + fx * (v01 - v00);
    const double bot = v10 + fx * (v11 - v10);
    return top + fy * (bot - top);
}

void check_clahe_params(double clip, int tiles_x, int tiles_y) {
    if (tiles_x < 1 || tiles_y < 1) throw ParamError("clahe: tiles must be >= 1");
    if (clip <= 0.0) throw ParamError("clahe: clip must be > 0");
}

std::vector<double> make_gaussian_kernel(double sigma) {
    if (sigma <= 0.0) throw ParamError("gaussian sigma must be > 0");
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double w = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

} // namespace

GrayImage resize(const GrayImage& img, int w, int h, ResizeMethod method) {
    return resample(img, w, h, method, Border::Clamp);
}

GrayImage hist_eq(const GrayImage& img) {
    const std::optional<EqLut> lut = image_eq_lut(img);
    if (!lut) return img;
    GrayImage out(img.width, img.height);
    const auto n = static_cast<long long>(img.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i)
        out.pixels[static_cast<std::size_t>(i)] =
            lut->map[static_cast<std::size_t>(bin256(img.pixels[static_cast<std::size_t>(i)]))];
    return out;
}

GrayImage clahe(const GrayImage& img, double clip, int tiles_x, int tiles_y) {
    check_clahe_params(clip, tiles_x, tiles_y);
    if (is_constant(img)) return img;

    const ClaheGrid g = build_clahe_grid(img, clip, tiles_x, tiles_y);
    std::vector<int> ix, iy;
    std::vector<double> wx, wy;
    blend_tables(g.cx, img.width, ix, wx);
    blend_tables(g.cy, img.height, iy, wy);

    GrayImage out(img.width, img.height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y) {
        const int t0 = iy[static_cast<std::size_t>(y)];
        const int t1 = std::min(t0 + 1, g.ty - 1);
        const double fy = wy[static_cast<std::size_t>(y)];
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = clahe_pixel(img, g, ix, wx, x, t0, t1, fy, y);
    }
    return out;
}

GrayImage gamma(const GrayImage& img, double g) {
    if (g <= 0.0) throw ParamError("gamma: G must be > 0");
    const double e = 1.0 / g;
    GrayImage out(img.width, img.height);
    const auto n = static_cast<long long>(img.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i)
        out.pixels[static_cast<std::size_t>(i)] =
            clamp01(std::pow(img.pixels[static_cast<std::size_t>(i)], e));
    return out;
}

std::vector<double> gaussian_kernel(double sigma) { return make_gaussian_kernel(sigma); }

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    const std::vector<double> k = make_gaussian_kernel(sigma);
    const int r = (static_cast<int>(k.size()) - 1) / 2;

    GrayImage tmp(img.width, img.height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i)
                acc += k[static_cast<std::size_t>(i + r)] * img.at(reflect_index(x + i, img.width), y);
            tmp.at(x, y) = acc;
        }
    }
    GrayImage out(img.width, img.height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i)
                acc += k[static_cast<std::size_t>(i + r)] * tmp.at(x, reflect_index(y + i, img.height));
            out.at(x, y) = clamp01(acc);
        }
    }
    return out;
}

GrayImage unsharp(const GrayImage& img, double radius, double amount) {
    if (radius <= 0.0) throw ParamError("unsharp: radius must be > 0");
    const GrayImage blurred = gaussian_blur(img, radius);
    GrayImage out(img.width, img.height);
    const auto n = static_cast<long long>(img.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        out.pixels[s] = clamp01(img.pixels[s] + amount * (img.pixels[s] - blurred.pixels[s]));
    }
    return out;
}

BinaryMask dilate(const BinaryMask& mask, double radius) {
    if (radius < 0.0) throw ParamError("dilate radius must be >= 0");
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;

    // Half-width of the disk per row offset; -1 marks rows outside it.
    std::vector<int> span(static_cast<std::size_t>(2 * r + 1), -1);
    for (int dy = -r; dy <= r; ++dy) {
        int dx = 0;
        while (static_cast<double>(dx + 1) * (dx + 1) + static_cast<double>(dy) * dy <= r2) ++dx;
        if (static_cast<double>(dy) * dy <= r2) span[static_cast<std::size_t>(dy + r)] = dx;
    }

    BinaryMask out(mask.width, mask.height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            std::uint8_t v = 0;
            for (int dy = -r; dy <= r && !v; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= mask.height) continue;
                const int s = span[static_cast<std::size_t>(dy + r)];
                if (s < 0) continue;
                const int x0 = std::max(0, x - s);
                const int x1 = std::min(mask.width - 1, x + s);
                for (int xx = x0; xx <= x1; ++xx) {
                    if (mask.at(xx, yy)) {
                        v = 1;
                        break;
                    }
                }
            }
            out.at(x, y) = v;
        }
    }
    return out;
}

GrayImage apply_mask(const GrayImage& img, const BinaryMask& mask) {
    if (img.width != mask.width || img.height != mask.height)
        throw ShapeError("apply_mask: image and mask dimensions differ");
    GrayImage out(img.width, img.height);
    const auto n = static_cast<long long>(img.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        out.pixels[s] = mask.bits[s] ? img.pixels[s] : 0.0;
    }
    return out;
}

GrayImage upscale(const GrayImage& mask_img, int factor) {
    if (factor < 1) throw ParamError("upscale factor must be >= 1");
    if (factor == 1) return mask_img;
    return resample(mask_img, mask_img.width * factor, mask_img.height * factor,
                    ResizeMethod::Bicubic, Border::Extrapolate);
}

GrayImage apply_recipe(const GrayImage& img, const AugmentRecipe& recipe) {
    GrayImage cur = img;
    for (const AugStep& step : recipe) {
        cur = std::visit(
            [&](const auto& s) -> GrayImage {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, HistEqStep>) return hist_eq(cur);
                else if constexpr (std::is_same_v<T, GammaStep>) return gamma(cur, s.g);
                else if constexpr (std::is_same_v<T, ClaheStep>)
                    return clahe(cur, s.clip, s.tiles_x, s.tiles_y);
                else
                    return unsharp(cur, s.radius, s.amount);
            },
            step);
    }
    return cur;
}

GrayImage preprocess_stage2(const GrayImage& img, const std::optional<BinaryMask>& mask,
                            const PipelineConfig& cfg) {
    GrayImage masked = img;
    if (mask) {
        if (mask->width != cfg.mask_size || mask->height != cfg.mask_size)
            throw ShapeError("stage2: mask dimensions must equal mask_size x mask_size");
        const GrayImage up = upscale(to_gray(*mask), cfg.upscale_factor);
        const GrayImage fitted = resize(up, img.width, img.height, ResizeMethod::Bicubic);
        const BinaryMask full = dilate(threshold(fitted, 0.5), cfg.dilate_radius);
        masked = apply_mask(img, full);
    } else if (cfg.missing_mask_policy == PipelineConfig::MissingMask::Error) {
        throw ValidationError("stage2: mask missing and missing_mask_policy=error");
    }
    return apply_recipe(masked, cfg.recipe);
}

GrayImage random_augment(const GrayImage& img, double max_rotation_deg, double hflip_prob,
                         std::uint64_t seed) {
    if (hflip_prob < 0.0 || hflip_prob > 1.0)
        throw ParamError("random_augment: hflip_prob must lie in [0,1]");
    if (max_rotation_deg < 0.0) throw ParamError("random_augment: max_rotation must be >= 0");

    Rng rng(seed);
    const double angle = rng.next_double(-max_rotation_deg, max_rotation_deg);
    const bool flip = rng.next_double() < hflip_prob;

    GrayImage out(img.width, img.height);
    const double rad = angle * std::numbers::pi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cx = (img.width - 1) / 2.0;
    const double cy = (img.height - 1) / 2.0;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < img.height; ++y) {
        const double dy = y - cy;
        for (int x = 0; x < img.width; ++x) {
            const double dx = x - cx;
            const double sx = cx + c * dx + s * dy;
            const double sy = cy - s * dx + c * dy;
            out.at(x, y) = sample_bilinear_reflect(img, sx, sy);
        }
    }
    return flip ? hflip(out) : out;
}

BinaryMask threshold(const GrayImage& img, double t) {
    BinaryMask m(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) m.bits[i] = img.pixels[i] >= t ? 1 : 0;
    return m;
}

GrayImage to_gray(const BinaryMask& mask) {
    GrayImage g(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i) g.pixels[i] = mask.bits[i] ? 1.0 : 0.0;
    return g;
}

GrayImage hflip(const GrayImage& img) {
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
    return out;
}

namespace serial {

GrayImage resize(const GrayImage& img, int w, int h, ResizeMethod method) {
    if (w < 1 || h < 1) throw ParamError("resize target dimensions must be >= 1");
    GrayImage out(w, h);
    const double scale_x = static_cast<double>(img.width) / w;
    const double scale_y = static_cast<double>(img.height) / h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = resample_pixel(img, x, y, scale_x, scale_y, method, Border::Clamp);
    return out;
}

GrayImage hist_eq(const GrayImage& img) {
    const std::optional<EqLut> lut = image_eq_lut(img);
    if (!lut) return img;
    GrayImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.pixels[i] = lut->map[static_cast<std::size_t>(bin256(img.pixels[i]))];
    return out;
}

GrayImage clahe(const GrayImage& img, double clip, int tiles_x, int tiles_y) {
    check_clahe_params(clip, tiles_x, tiles_y);
    if (is_constant(img)) return img;

    const ClaheGrid g = build_clahe_grid(img, clip, tiles_x, tiles_y);
    std::vector<int> ix, iy;
    std::vector<double> wx, wy;
    blend_tables(g.cx, img.width, ix, wx);
    blend_tables(g.cy, img.height, iy, wy);

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        const int t0 = iy[static_cast<std::size_t>(y)];
        const int t1 = std::min(t0 + 1, g.ty - 1);
        const double fy = wy[static_cast<std::size_t>(y)];
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = clahe_pixel(img, g, ix, wx, x, t0, t1, fy, y);
    }
    return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    const std::vector<double> k = make_gaussian_kernel(sigma);
    const int r = (static_cast<int>(k.size()) - 1) / 2;
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j)
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<std::size_t>(j + r)] * k[static_cast<std::size_t>(i + r)] *
                           img.at(reflect_index(x + i, img.width), reflect_index(y + j, img.height));
            out.at(x, y) = clamp01(acc);
        }
    }
    return out;
}

BinaryMask dilate(const BinaryMask& mask, double radius) {
    if (radius < 0.0) throw ParamError("dilate radius must be >= 0");
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    BinaryMask out(mask.width, mask.height);
    // Naive per-neighbor membership test; no precomputed spans.
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            std::uint8_t v = 0;
            for (int dy = -r; dy <= r && !v; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2) continue;
                    const int xx = x + dx;
                    const int yy = y + dy;
                    if (xx < 0 || xx >= mask.width || yy < 0 || yy >= mask.height) continue;
                    if (mask.at(xx, yy)) {
                        v = 1;
                        break;
                    }
                }
            }
            out.at(x, y) = v;
        }
    }
    return out;
}

} // namespace serial

} // namespace biasaudit::imgproc
