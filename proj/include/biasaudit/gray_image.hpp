#pragma once

#include <cstddef>
#include <vector>

#include "biasaudit/errors.hpp"

namespace biasaudit {

/// Single-channel image, row-major, intensities in [0,1].
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels; // size == width * height

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw ShapeError("GrayImage dimensions must be positive");
    }

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }

    bool same_shape(const GrayImage& o) const { return width == o.width && height == o.height; }
};

/// Binary mask, row-major, values strictly {0,1}.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // size == width * height

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw ShapeError("BinaryMask dimensions must be positive");
    }

    std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return bits.size(); }
};

} // namespace biasaudit
