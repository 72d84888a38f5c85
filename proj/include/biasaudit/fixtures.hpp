#pragma once

// Deterministic synthetic corpora for acceptance and regression runs.
// Real corpora in this domain are large and license-encumbered, so the
// repo ships generators instead of image bytes: same seed, same files,
// byte for byte. Each generator writes PNG images plus a manifest.csv
// in the standard `path,dataset,label,split` form.

#include <cstdint>
#include <filesystem>

namespace biasaudit::fixtures {

// Two datasets of blurred-noise images ("bright_a", "bright_b"); every
// image in bright_b carries a constant +offset brightness shift. Each
// image is standardized before the shift, so the shift is the only
// between-dataset signal and equalization removes it.
struct BrightnessPairOptions {
    int per_dataset = 700;
    int size = 64;
    double offset = 0.10;
    std::uint64_t seed = 7001;
};
void write_brightness_pair(const std::filesystem::path& dir, const BrightnessPairOptions& opt);

// Two datasets of blurred-noise images ("corner_a", "corner_b");
// corner_b images carry a bright patch_size x patch_size square at
// (margin, margin) — the shortcut a 36x36 classifier should latch onto.
struct CornerPairOptions {
    int per_dataset = 1100;
    int size = 36;
    int patch_size = 3;
    int margin = 2;
    double patch_value = 0.95;
    std::uint64_t seed = 7002;
};
void write_corner_pair(const std::filesystem::path& dir, const CornerPairOptions& opt);

// Three texture classes (horizontal, vertical, diagonal stripes) with
// per-image random phase and mild noise, split into train/test rows.
struct TextureCorpusOptions {
    int per_class_train = 150;
    int per_class_test = 50;
    int size = 36;
    std::uint64_t seed = 7003;
};
void write_texture_corpus(const std::filesystem::path& dir, const TextureCorpusOptions& opt);

// Images plus disk segmentation masks for the stage-2 pipeline: images/
// holds blurred-noise images with a bright blob, masks/ holds
// mask_size x mask_size disks covering the blob.
struct Stage2DemoOptions {
    int count = 10;
    int image_size = 128;
    int mask_size = 256;
    std::uint64_t seed = 7004;
};
void write_stage2_demo(const std::filesystem::path& dir, const Stage2DemoOptions& opt);

} // namespace biasaudit::fixtures
