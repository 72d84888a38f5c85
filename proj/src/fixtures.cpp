#include "biasaudit/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/image_io.hpp"
#include "biasaudit/imgproc.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::fixtures {

namespace {

namespace fs = std::filesystem;

// Blurred uniform noise, standardized per image to the requested mean
// and per-pixel deviation. Standardizing makes the mean an exact
// per-image constant, so a later brightness offset is the sole
// between-dataset difference.
GrayImage noise_base(int size, double mean, double dev, double blur_sigma, Rng& rng) {
    GrayImage img(size, size);
    for (double& v : img.pixels) v = rng.next_double();
    img = imgproc::gaussian_blur(img, blur_sigma);
    double mu = 0.0;
    for (double v : img.pixels) mu += v;
    mu /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img.pixels) var += (v - mu) * (v - mu);
    var /= static_cast<double>(img.size());
    const double sd = std::sqrt(var);
    for (double& v : img.pixels) {
        v = sd > 1e-12 ? mean + dev * (v - mu) / sd : mean;
        v = std::clamp(v, 0.0, 1.0);
    }
    return img;
}

std::string numbered(const std::string& stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04d.png", i);
    return stem + buf;
}

void write_manifest(const fs::path& dir, const std::vector<corpus::SampleRef>& rows) {
    corpus::SampleSet set;
    set.refs = rows;
    std::ofstream os(dir / "manifest.csv", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "manifest.csv").string());
    os << corpus::to_csv(set);
}

} // namespace

void write_brightness_pair(const fs::path& dir, const BrightnessPairOptions& opt) {
    if (opt.per_dataset <= 0 || opt.size < 4)
        throw ParamError("write_brightness_pair: per_dataset and size must be positive");
    fs::create_directories(dir / "images");
    std::vector<corpus::SampleRef> rows;
    const char* datasets[2] = {"bright_a", "bright_b"};
    for (int d = 0; d < 2; ++d) {
        const std::uint64_t dataset_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(d));
        for (int i = 0; i < opt.per_dataset; ++i) {
            Rng rng(mix_seed(dataset_seed, static_cast<std::uint64_t>(i)));
            GrayImage img = noise_base(opt.size, 0.45, 0.05, 2.0, rng);
            if (d == 1)
                for (double& v : img.pixels) v = std::clamp(v + opt.offset, 0.0, 1.0);
            const std::string rel = std::string("images/") + numbered(datasets[d], i);
            io::save_png_gray8(img, (dir / rel).string());
            rows.push_back({rel, datasets[d], "case", std::nullopt});
        }
    }
    write_manifest(dir, rows);
}

void write_corner_pair(const fs::path& dir, const CornerPairOptions& opt) {
    if (opt.per_dataset <= 0 || opt.size < 4)
        throw ParamError("write_corner_pair: per_dataset and size must be positive");
    if (opt.margin < 0 || opt.patch_size <= 0 || opt.margin + opt.patch_size > opt.size)
        throw ParamError("write_corner_pair: patch does not fit in the image");
    fs::create_directories(dir / "images");
    std::vector<corpus::SampleRef> rows;
    const char* datasets[2] = {"corner_a", "corner_b"};
    for (int d = 0; d < 2; ++d) {
        const std::uint64_t dataset_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(d));
        for (int i = 0; i < opt.per_dataset; ++i) {
            Rng rng(mix_seed(dataset_seed, static_cast<std::uint64_t>(i)));
            // Dark background: the tag should dominate activations the way
            // a bright corner marker dominates a dark radiograph border.
            GrayImage img = noise_base(opt.size, 0.2, 0.05, 1.5, rng);
            if (d == 1)
                for (int y = opt.margin; y < opt.margin + opt.patch_size; ++y)
                    for (int x = opt.margin; x < opt.margin + opt.patch_size; ++x)
                        img.at(x, y) = opt.patch_value;
            const std::string rel = std::string("images/") + numbered(datasets[d], i);
            io::save_png_gray8(img, (dir / rel).string());
            rows.push_back({rel, datasets[d], "case", std::nullopt});
        }
    }
    write_manifest(dir, rows);
}

void write_texture_corpus(const fs::path& dir, const TextureCorpusOptions& opt) {
    if (opt.per_class_train <= 0 || opt.per_class_test < 0 || opt.size < 4)
        throw ParamError("write_texture_corpus: counts and size must be positive");
    fs::create_directories(dir / "images");
    std::vector<corpus::SampleRef> rows;
    const char* labels[3] = {"horizontal", "vertical", "diagonal"};
    const double freq = 4.0;
    for (int c = 0; c < 3; ++c) {
        const std::uint64_t class_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(c));
        const int total = opt.per_class_train + opt.per_class_test;
        for (int i = 0; i < total; ++i) {
            Rng rng(mix_seed(class_seed, static_cast<std::uint64_t>(i)));
            const double phase = rng.next_double(0.0, 2.0 * std::numbers::pi);
            GrayImage img(opt.size, opt.size);
            for (int y = 0; y < opt.size; ++y)
                for (int x = 0; x < opt.size; ++x) {
                    const double coord = c == 0 ? y : c == 1 ? x : 0.5 * (x + y);
                    const double wave =
                        std::sin(2.0 * std::numbers::pi * freq * coord / opt.size + phase);
                    const double noise = rng.next_double(-1.0, 1.0) * 0.03;
                    img.at(x, y) = std::clamp(0.5 + 0.35 * wave + noise, 0.0, 1.0);
                }
            const std::string rel = std::string("images/") + numbered(labels[c], i);
            io::save_png_gray8(img, (dir / rel).string());
            rows.push_back({rel, "textures", labels[c],
                            i < opt.per_class_train ? corpus::Split::Train : corpus::Split::Test});
        }
    }
    write_manifest(dir, rows);
}

void write_stage2_demo(const fs::path& dir, const Stage2DemoOptions& opt) {
    if (opt.count <= 0 || opt.image_size < 8 || opt.mask_size < 8)
        throw ParamError("write_stage2_demo: counts and sizes must be positive");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::vector<corpus::SampleRef> rows;
    for (int i = 0; i < opt.count; ++i) {
        Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(i)));
        const double cx = rng.next_double(0.3, 0.7) * opt.image_size;
        const double cy = rng.next_double(0.3, 0.7) * opt.image_size;
        const double r = rng.next_double(0.18, 0.28) * opt.image_size;
        GrayImage img = noise_base(opt.image_size, 0.40, 0.08, 2.0, rng);
        for (int y = 0; y < opt.image_size; ++y)
            for (int x = 0; x < opt.image_size; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double bump = 0.35 * std::exp(-d2 / (2.0 * r * r));
                img.at(x, y) = std::clamp(img.at(x, y) + bump, 0.0, 1.0);
            }
        const double scale = static_cast<double>(opt.mask_size) / opt.image_size;
        BinaryMask mask(opt.mask_size, opt.mask_size);
        for (int y = 0; y < opt.mask_size; ++y)
            for (int x = 0; x < opt.mask_size; ++x) {
                const double dx = x - cx * scale;
                const double dy = y - cy * scale;
                mask.at(x, y) = dx * dx + dy * dy <= (r * scale) * (r * scale) ? 1 : 0;
            }
        const std::string img_rel = std::string("images/") + numbered("demo", i);
        const std::string mask_rel = std::string("masks/") + numbered("demo", i);
        io::save_png_gray8(img, (dir / img_rel).string());
        io::save_png_gray8(imgproc::to_gray(mask), (dir / mask_rel).string());
        rows.push_back({img_rel, "demo", i % 2 == 0 ? "a" : "b",
                        i % 2 == 0 ? corpus::Split::Train : corpus::Split::Test});
    }
    write_manifest(dir, rows);
}

} // namespace biasaudit::fixtures
