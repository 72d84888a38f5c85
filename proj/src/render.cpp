#include "biasaudit/render.hpp"

#include <algorithm>
#include <cmath>

#include "biasaudit/errors.hpp"
#include "biasaudit/image_io.hpp"

namespace biasaudit::render {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 10> kPalette = {{
    {31, 119, 180},  // blue
    {255, 127, 14},  // orange
    {44, 160, 44},   // green
    {214, 39, 40},   // red
    {148, 103, 189}, // purple
    {140, 86, 75},   // brown
    {227, 119, 194}, // pink
    {127, 127, 127}, // gray
    {188, 189, 34},  // olive
    {23, 190, 207},  // cyan
}};

// Pixel range for one axis: 5% margin each side, degenerate extents
// padded by one data unit so coincident points still land mid-canvas.
struct AxisMap {
    double lo = 0.0, scale = 0.0, offset = 0.0;

    AxisMap(double mn, double mx, int pixels) {
        double span = mx - mn;
        if (!(span > 0.0)) {
            mn -= 1.0;
            span = 2.0;
        }
        const double margin = 0.05 * pixels;
        lo = mn;
        scale = (pixels - 1.0 - 2.0 * margin) / span;
        offset = margin;
    }
    int apply(double v) const { return static_cast<int>(std::lround(offset + (v - lo) * scale)); }
};

} // namespace

std::array<std::uint8_t, 3> group_color(int group) {
    return kPalette[static_cast<std::size_t>(group % static_cast<int>(kPalette.size()))];
}

void render_scatter(const std::vector<std::array<double, 2>>& points,
                    const std::vector<int>& groups, const std::filesystem::path& path, int width,
                    int height) {
    if (points.empty()) throw ParamError("render_scatter: no points");
    if (points.size() != groups.size())
        throw ShapeError("render_scatter: points/groups sizes differ");
    if (width < 16 || height < 16) throw ParamError("render_scatter: canvas too small");

    double mnx = points[0][0], mxx = points[0][0];
    double mny = points[0][1], mxy = points[0][1];
    for (const auto& p : points) {
        mnx = std::min(mnx, p[0]);
        mxx = std::max(mxx, p[0]);
        mny = std::min(mny, p[1]);
        mxy = std::max(mxy, p[1]);
    }
    const AxisMap xmap(mnx, mxx, width);
    const AxisMap ymap(mny, mxy, height);

    io::RgbImage canvas(width, height);
    const int r = 3;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const int cx = xmap.apply(points[i][0]);
        // Flip y so larger coordinates render higher on the canvas.
        const int cy = height - 1 - ymap.apply(points[i][1]);
        const auto color = group_color(groups[i]);
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                if (dx * dx + dy * dy > r * r) continue;
                const int x = cx + dx, y = cy + dy;
                if (x < 0 || x >= width || y < 0 || y >= height) continue;
                std::uint8_t* px = canvas.px(x, y);
                px[0] = color[0];
                px[1] = color[1];
                px[2] = color[2];
            }
        }
    }
    io::save_png_rgb8(canvas, path.string());
}

std::array<double, 3> hot_color(double v) {
    auto clamp01 = [](double t) { return std::min(1.0, std::max(0.0, t)); };
    return {clamp01(3.0 * v), clamp01(3.0 * v - 1.0), clamp01(3.0 * v - 2.0)};
}

void render_heatmap_overlay(const GrayImage& img, const nn::GradCamMap& map,
                            const std::filesystem::path& path) {
    const GrayImage heat = nn::upsample_heatmap(map, img.width, img.height);
    io::RgbImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double g = img.at(x, y);
            const auto hc = hot_color(heat.at(x, y));
            std::uint8_t* px = out.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = 0.5 * g + 0.5 * hc[static_cast<std::size_t>(c)];
                px[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::min(1.0, std::max(0.0, v))));
            }
        }
    }
    io::save_png_rgb8(out, path.string());
}

} // namespace biasaudit::render
