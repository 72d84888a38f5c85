#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "biasaudit/gray_image.hpp"

namespace biasaudit::io {

/// Decodes an 8/16-bit PNG or 8-bit JPEG into [0,1] intensities.
/// Values are scaled by the bit-depth maximum (255 or 65535); color
/// inputs are reduced to gray by the plain channel average.
/// Throws DecodeError for unreadable or truncated files.
GrayImage load_image(const std::string& path);

/// Writes an 8-bit grayscale PNG; intensities are scaled by 255 and
/// rounded to nearest.
void save_png_gray8(const GrayImage& img, const std::string& path);

/// Interleaved RGB8 raster, used by the figure renderer.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb; // 3 * width * height

    RgbImage() = default;
    RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});

    std::uint8_t* px(int x, int y) { return &rgb[3 * (static_cast<std::size_t>(y) * width + x)]; }
    const std::uint8_t* px(int x, int y) const {
        return &rgb[3 * (static_cast<std::size_t>(y) * width + x)];
    }
};

void save_png_rgb8(const RgbImage& img, const std::string& path);

/// Loads a PNG as a binary mask: any nonzero intensity is foreground.
BinaryMask load_mask(const std::string& path);

} // namespace biasaudit::io
