#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "biasaudit/audit.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/fixtures.hpp"

namespace {

// Exit codes: 0 = run completed and every cell succeeded; 1 = hard
// failure before/outside the cell loop (bad usage, unreadable config or
// manifest); 2 = run completed but at least one cell recorded an error.
int finish(const biasaudit::audit::RunResult& result, const std::string& where) {
    std::size_t cells = 0, errors = 0;
    if (result.report.contains("cells")) {
        cells = result.report.at("cells").size();
        for (const auto& c : result.report.at("cells"))
            if (c.value("status", std::string()) == "error") ++errors;
    } else if (result.report.contains("runs")) {
        cells = result.report.at("runs").size();
    }
    std::cout << "report written to " << where << " (" << cells
              << (result.report.contains("runs") ? " runs" : " cells") << ", " << errors
              << " errors)\n";
    return result.any_error ? 2 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Corpus bias audit and preprocessing toolkit"};
    app.require_subcommand(1);

    std::string tsne_config, gradcam_config, pipeline_config, train_config, merge_dir;

    CLI::App* audit_cmd = app.add_subcommand("audit", "Stage-1 source-dataset bias probes");
    audit_cmd->require_subcommand(1);
    CLI::App* tsne_cmd =
        audit_cmd->add_subcommand("tsne-svm", "Joint t-SNE embedding scored by an SVM");
    tsne_cmd->add_option("--config", tsne_config, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);
    CLI::App* gradcam_cmd =
        audit_cmd->add_subcommand("gradcam", "ConvNet probe with Grad-CAM overlays");
    gradcam_cmd->add_option("--config", gradcam_config, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "Stage-2 preprocessing");
    pipeline_cmd->require_subcommand(1);
    CLI::App* pipeline_run_cmd =
        pipeline_cmd->add_subcommand("run", "Mask + enhance every manifest image");
    pipeline_run_cmd->add_option("--config", pipeline_config, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* train_cmd =
        app.add_subcommand("train", "Train and evaluate the classifier on a manifest");
    train_cmd->add_option("--config", train_config, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* report_cmd = app.add_subcommand("report", "Report utilities");
    report_cmd->require_subcommand(1);
    CLI::App* merge_cmd =
        report_cmd->add_subcommand("merge", "Merge <dir>/*/report.json into one report");
    merge_cmd->add_option("dir", merge_dir, "Directory holding per-run output directories")
        ->required()
        ->check(CLI::ExistingDirectory);

    CLI::App* fixtures_cmd =
        app.add_subcommand("fixtures", "Generate the deterministic synthetic corpora");
    fixtures_cmd->require_subcommand(1);

    biasaudit::fixtures::BrightnessPairOptions bopt;
    std::string bright_dir;
    CLI::App* bright_cmd = fixtures_cmd->add_subcommand(
        "brightness", "Two blurred-noise datasets differing by a brightness offset");
    bright_cmd->add_option("--out", bright_dir, "Output directory")->required();
    bright_cmd->add_option("--per-dataset", bopt.per_dataset, "Images per dataset");
    bright_cmd->add_option("--size", bopt.size, "Image side length");
    bright_cmd->add_option("--offset", bopt.offset, "Brightness offset added to bright_b");
    bright_cmd->add_option("--seed", bopt.seed, "Generator seed");

    biasaudit::fixtures::CornerPairOptions copt;
    std::string corner_dir;
    CLI::App* corner_cmd = fixtures_cmd->add_subcommand(
        "corner", "Two blurred-noise datasets, one carrying a bright corner patch");
    corner_cmd->add_option("--out", corner_dir, "Output directory")->required();
    corner_cmd->add_option("--per-dataset", copt.per_dataset, "Images per dataset");
    corner_cmd->add_option("--size", copt.size, "Image side length");
    corner_cmd->add_option("--patch-size", copt.patch_size, "Corner patch side length");
    corner_cmd->add_option("--margin", copt.margin, "Patch offset from the top-left corner");
    corner_cmd->add_option("--patch-value", copt.patch_value, "Patch intensity");
    corner_cmd->add_option("--seed", copt.seed, "Generator seed");

    biasaudit::fixtures::TextureCorpusOptions topt;
    std::string texture_dir;
    CLI::App* texture_cmd =
        fixtures_cmd->add_subcommand("textures", "Three stripe-texture classes with splits");
    texture_cmd->add_option("--out", texture_dir, "Output directory")->required();
    texture_cmd->add_option("--per-class-train", topt.per_class_train, "Training images per class");
    texture_cmd->add_option("--per-class-test", topt.per_class_test, "Test images per class");
    texture_cmd->add_option("--size", topt.size, "Image side length");
    texture_cmd->add_option("--seed", topt.seed, "Generator seed");

    biasaudit::fixtures::Stage2DemoOptions sopt;
    std::string stage2_dir;
    CLI::App* stage2_cmd =
        fixtures_cmd->add_subcommand("stage2", "Images plus disk masks for the pipeline");
    stage2_cmd->add_option("--out", stage2_dir, "Output directory")->required();
    stage2_cmd->add_option("--count", sopt.count, "Number of images");
    stage2_cmd->add_option("--image-size", sopt.image_size, "Image side length");
    stage2_cmd->add_option("--mask-size", sopt.mask_size, "Mask side length");
    stage2_cmd->add_option("--seed", sopt.seed, "Generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        namespace audit = biasaudit::audit;
        namespace fixtures = biasaudit::fixtures;
        if (tsne_cmd->parsed()) {
            const auto cfg = audit::load_tsne_svm_config(tsne_config);
            return finish(audit::run_tsne_svm_probe(cfg), (cfg.output_dir / "report.json").string());
        }
        if (gradcam_cmd->parsed()) {
            const auto cfg = audit::load_gradcam_config(gradcam_config);
            return finish(audit::run_gradcam_probe(cfg), (cfg.output_dir / "report.json").string());
        }
        if (pipeline_run_cmd->parsed()) {
            const auto cfg = audit::load_pipeline_config(pipeline_config);
            return finish(audit::run_stage2(cfg), (cfg.output_dir / "report.json").string());
        }
        if (train_cmd->parsed()) {
            const auto cfg = audit::load_train_config(train_config);
            return finish(audit::train_eval_classifier(cfg),
                          (cfg.output_dir / "report.json").string());
        }
        if (merge_cmd->parsed()) {
            return finish(audit::merge_reports(merge_dir),
                          (std::filesystem::path(merge_dir) / "report.json").string());
        }
        if (bright_cmd->parsed()) {
            fixtures::write_brightness_pair(bright_dir, bopt);
            std::cout << "fixture written to " << bright_dir << "\n";
            return 0;
        }
        if (corner_cmd->parsed()) {
            fixtures::write_corner_pair(corner_dir, copt);
            std::cout << "fixture written to " << corner_dir << "\n";
            return 0;
        }
        if (texture_cmd->parsed()) {
            fixtures::write_texture_corpus(texture_dir, topt);
            std::cout << "fixture written to " << texture_dir << "\n";
            return 0;
        }
        if (stage2_cmd->parsed()) {
            fixtures::write_stage2_demo(stage2_dir, sopt);
            std::cout << "fixture written to " << stage2_dir << "\n";
            return 0;
        }
    } catch (const biasaudit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand executed\n";
    return 1;
}
