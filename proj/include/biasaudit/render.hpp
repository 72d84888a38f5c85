#pragma once

// Minimal deterministic rasterizer for the two figure kinds the reports
// need: group-colored scatter plots of 2-D embeddings and Grad-CAM
// heatmap overlays. No text, no anti-aliasing; identical inputs produce
// identical PNG bytes.

#include <array>
#include <filesystem>
#include <vector>

#include "biasaudit/gray_image.hpp"
#include "biasaudit/nn.hpp"

namespace biasaudit::render {

// Marker color for a group index (10-color palette, cycled).
std::array<std::uint8_t, 3> group_color(int group);

// White canvas, 5% margins, filled disk markers (radius 3). A degenerate
// extent (all points equal on an axis) pads that axis by one unit.
void render_scatter(const std::vector<std::array<double, 2>>& points,
                    const std::vector<int>& groups, const std::filesystem::path& path,
                    int width = 640, int height = 480);

// The documented monotone colormap used for overlays:
// r = clamp(3v), g = clamp(3v-1), b = clamp(3v-2) (black-red-yellow-white).
std::array<double, 3> hot_color(double v);

// Upsamples the map to the image size, maps through hot_color and
// alpha-blends at 0.5 over the grayscale image.
void render_heatmap_overlay(const GrayImage& img, const nn::GradCamMap& map,
                            const std::filesystem::path& path);

} // namespace biasaudit::render
