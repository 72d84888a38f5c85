#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "biasaudit/gray_image.hpp"

// Pixel-level operations. Conventions, fixed here so results are
// bit-reproducible:
//  * Geometric resampling uses the pixel-center mapping
//      src = (dst + 0.5) * in_size / out_size - 0.5.
//    resize() clamps out-of-range taps to the edge; upscale() extends
//    the border by linear extrapolation, which makes bicubic reproduce
//    linear ramps. Bicubic is the Keys kernel with a = -0.5.
//  * Histogram equalization and CLAHE quantize to 256 bins with
//    bin(v) = min(255, floor(v * 256)).
//  * Gaussian kernels are truncated at radius ceil(3*sigma) and
//    normalized; convolution pads by reflection without repeating the
//    edge sample (index -1 maps to 1).
//  * Every operation returns intensities in [0,1] for inputs in [0,1].
//
// The omp-parallel kernels and the serial:: reference implementations
// compute outputs element-wise in the same order, so parallel and
// serial results are bit-identical except where noted (gaussian_blur:
// the reference convolves directly in 2-D instead of separably).

namespace biasaudit::imgproc {

enum class ResizeMethod { Nearest, Bilinear, Bicubic };

struct HistEqStep {};
struct GammaStep {
    double g = 1.5;
};
struct ClaheStep {
    double clip = 40.0; // absolute per-bin count limit
    int tiles_x = 8;
    int tiles_y = 8;
};
struct UnsharpStep {
    double radius = 1.0; // sigma of the Gaussian
    double amount = 1.0;
};

using AugStep = std::variant<HistEqStep, GammaStep, ClaheStep, UnsharpStep>;

/// Ordered list of enhancement steps; empty means identity.
using AugmentRecipe = std::vector<AugStep>;

struct PipelineConfig {
    int mask_size = 256;       // required mask side length
    int upscale_factor = 4;    // integer mask upscaling before the resize back
    double dilate_radius = 5.0;
    AugmentRecipe recipe;
    enum class MissingMask { Error, Passthrough };
    MissingMask missing_mask_policy = MissingMask::Error;
};

GrayImage resize(const GrayImage& img, int w, int h, ResizeMethod method);

/// Global 256-bin histogram equalization,
///   out = (cdf(bin(v)) - cdf_min) / (N - cdf_min).
/// Images occupying a single bin are returned unchanged (the formula
/// degenerates).
GrayImage hist_eq(const GrayImage& img);

/// Contrast-limited adaptive equalization. The image is cut into
/// tiles_x x tiles_y near-equal tiles; each tile's 256-bin histogram is
/// clipped at `clip` counts, the excess is spread uniformly over all
/// bins in one pass, and the equalization mapping is built per tile.
/// Pixels blend the mappings of their four nearest tile centers
/// bilinearly. Constant images are returned unchanged.
GrayImage clahe(const GrayImage& img, double clip, int tiles_x, int tiles_y);

/// Power-law map out = in^(1/G). Throws ParamError when G <= 0.
GrayImage gamma(const GrayImage& img, double g);

/// Separable Gaussian blur, sigma > 0.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

/// out = clamp(in + amount * (in - gaussian_blur(in, radius)), 0, 1).
GrayImage unsharp(const GrayImage& img, double radius, double amount);

/// Morphological dilation with a disk of the given radius
/// (dx^2 + dy^2 <= r^2); radius 0 is the identity.
BinaryMask dilate(const BinaryMask& mask, double radius);

/// out(p) = img(p) where mask(p) = 1, else 0. Throws ShapeError on a
/// dimension mismatch.
GrayImage apply_mask(const GrayImage& img, const BinaryMask& mask);

/// Bicubic upscale to (factor*w, factor*h); factor 1 is the identity.
/// Output is suitable for re-binarization by thresholding at 0.5.
GrayImage upscale(const GrayImage& mask_img, int factor);

/// Left-to-right composition of the recipe steps.
GrayImage apply_recipe(const GrayImage& img, const AugmentRecipe& recipe);

/// Stage-2 chain: upscale the mask, resize it (bicubic) to the image
/// dimensions, re-binarize at 0.5, dilate, mask the image, then apply
/// the recipe. A missing mask either raises ValidationError or skips
/// the masking steps, per cfg.missing_mask_policy.
GrayImage preprocess_stage2(const GrayImage& img, const std::optional<BinaryMask>& mask,
                            const PipelineConfig& cfg);

/// Rotation by an angle drawn uniformly from [-max_rotation_deg,
/// +max_rotation_deg] (bilinear, reflect padding, about the image
/// center), then a horizontal flip with probability hflip_prob. The
/// angle is drawn first, then the flip; both from Rng(seed).
GrayImage random_augment(const GrayImage& img, double max_rotation_deg, double hflip_prob,
                         std::uint64_t seed);

/// v >= t becomes foreground.
BinaryMask threshold(const GrayImage& img, double t);

/// Mask as a 0/1-valued image.
GrayImage to_gray(const BinaryMask& mask);

/// Mirror about the vertical axis.
GrayImage hflip(const GrayImage& img);

// Plain single-threaded reference kernels, kept for correctness tests
// and as the baseline in the benchmark target.
namespace serial {
GrayImage resize(const GrayImage& img, int w, int h, ResizeMethod method);
GrayImage hist_eq(const GrayImage& img);
GrayImage clahe(const GrayImage& img, double clip, int tiles_x, int tiles_y);
GrayImage gaussian_blur(const GrayImage& img, double sigma); // direct 2-D convolution
BinaryMask dilate(const BinaryMask& mask, double radius);
} // namespace serial

} // namespace biasaudit::imgproc
