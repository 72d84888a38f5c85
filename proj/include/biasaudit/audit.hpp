#pragma once

// End-to-end orchestration: the two stage-1 bias probes, the stage-2
// preprocessing pipeline, the classifier training run, and report
// merging. Each runner consumes a JSON config, writes report.json,
// report.csv and its artifacts under the config's output directory, and
// returns the report plus an error flag for the CLI exit code (0 = all
// cells ok, 2 = at least one cell recorded an error).
//
// Determinism contract: report.json contains no timestamps or
// durations (those go to timings.json), artifact paths are relative to
// the output directory, and every cell's randomness derives from
// mix_seed chains rooted at the config seed, so reruns are
// byte-identical.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "biasaudit/embed.hpp"
#include "biasaudit/imgproc.hpp"
#include "biasaudit/nn.hpp"
#include "biasaudit/svm.hpp"

namespace biasaudit::audit {

/// One (dataset, label) group of the manifest.
struct GroupRef {
    std::string dataset;
    std::string label;

    bool operator==(const GroupRef&) const = default;
    std::string display() const { return dataset + "/" + label; }
};

/// A pair of groups to probe. Identical sides request the null-bias
/// control: one double-size draw from the group is split into two
/// pseudo-groups, so the probe should find nothing.
struct Combination {
    GroupRef a;
    GroupRef b;

    bool self_pair() const { return a == b; }
};

/// Named enhancement recipe compared by the t-SNE+SVM probe.
struct RecipeSpec {
    std::string name;
    imgproc::AugmentRecipe steps;
};

struct TsneSvmConfig {
    std::string manifest;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    std::vector<Combination> combinations;
    int samples_per_group = 200;
    int image_size = 256;
    double train_fraction = 0.9;
    std::vector<RecipeSpec> recipes{{"identity", {}}}; // identity unless overridden
    embed::TsneParams tsne;
    svm::TrainOptions svm_opts; // svm_opts.seed is ignored (cell-derived)
};

/// Axis-aligned window, image coordinates, used to report the fraction
/// of Grad-CAM mass falling inside it.
struct MassWindow {
    int x = 0;
    int y = 0;
    int width = 9;
    int height = 9;
};

struct GradcamConfig {
    std::string manifest;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    std::vector<Combination> combinations;
    int train_per_group = 500;
    int test_per_group = 500;
    double val_fraction = 0.1;
    int image_size = 36;
    nn::NetConfig net;       // input_size/num_classes are forced per run
    nn::TrainParams train;   // class_weights and seed are filled per cell
    nn::AugmentPolicy augment{10.0, 0.5};
    int overlays_per_group = 4;
    std::optional<MassWindow> mass_window;
};

struct PipelineRunConfig {
    std::string manifest;
    std::filesystem::path output_dir;
    std::filesystem::path mask_dir;
    imgproc::PipelineConfig pipeline;
};

struct TrainConfig {
    std::string manifest;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    int image_size = 36;
    nn::NetConfig net; // num_classes is derived from the manifest labels
    nn::TrainParams train;
    bool use_class_weights = true;
};

// Config loaders: strict key checking (unknown keys are ParamErrors so
// typos cannot silently fall back to defaults), every tuned constant
// overridable.
TsneSvmConfig load_tsne_svm_config(const std::filesystem::path& path);
GradcamConfig load_gradcam_config(const std::filesystem::path& path);
PipelineRunConfig load_pipeline_config(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

struct RunResult {
    nlohmann::json report;  // what was written to report.json
    bool any_error = false; // true if any cell has status "error"
};

/// Table-1/2 analog: per combination x recipe, embed the pooled images
/// with t-SNE and score a source-dataset SVM on a held-out split.
RunResult run_tsne_svm_probe(const TsneSvmConfig& cfg);

/// Table-3 / Fig-6 analog: per combination, train the small ConvNet to
/// tell the two groups apart and emit Grad-CAM overlays for test images.
RunResult run_gradcam_probe(const GradcamConfig& cfg);

/// Stage-2 preprocessing over a whole manifest; mirrors the input tree
/// under output_dir/processed and emits a manifest for the outputs.
RunResult run_stage2(const PipelineRunConfig& cfg);

/// Tables-4/5 analog: trains on the manifest's train split, evaluates
/// on the test split, reports Accuracy/Precision/Recall/AUROC/F1.
RunResult train_eval_classifier(const TrainConfig& cfg);

/// Reads <dir>/*/report.json (immediate subdirectories, sorted by
/// name) and writes a combined report.json/report.csv into <dir>.
RunResult merge_reports(const std::filesystem::path& dir);

} // namespace biasaudit::audit
