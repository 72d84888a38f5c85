#include "biasaudit/audit.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/image_io.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/render.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::audit {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- utilities

class Stopwatch {
  public:
    double seconds() const {
        const auto dt = std::chrono::steady_clock::now() - t0_;
        return std::chrono::duration<double>(dt).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string error_kind(const Error& e) {
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation";
    if (dynamic_cast<const InsufficientDataError*>(&e)) return "insufficient_data";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const ParamError*>(&e)) return "param";
    if (dynamic_cast<const DecodeError*>(&e)) return "decode";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    return "error";
}

void set_error(json& cell, const std::string& kind, const std::string& message) {
    cell["status"] = "error";
    cell["error"] = json{{"type", kind}, {"message", message}};
}

// Runs one report cell; any library error becomes a structured error in
// the cell so the run continues. A failed cell is rolled back to its
// identity fields so partial results never sit next to an error.
// Returns true when the cell succeeded.
template <typename F>
bool run_cell(json& cell, F&& body) {
    const json base = cell;
    try {
        body();
        cell["status"] = "ok";
        return true;
    } catch (const Error& e) {
        cell = base;
        set_error(cell, error_kind(e), e.what());
    } catch (const std::exception& e) {
        cell = base;
        set_error(cell, "error", e.what());
    }
    return false;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed for " + path.string());
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

// Shortest round-trip decimal form (what the JSON dump uses), so the CSV
// is byte-stable and loses no precision.
std::string num_str(double v) { return json(v).dump(); }

std::string sanitize_name(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? std::string("_") : out;
}

// --------------------------------------------------------- config parsing

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw FormatError(ctx + ": expected a JSON object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ParamError(ctx + ": unknown key `" + item.key() + "`");
    }
}

std::string req_str(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw FormatError(ctx + ": missing required key `" + key + "`");
    if (!j.at(key).is_string()) throw FormatError(ctx + ": key `" + key + "` must be a string");
    return j.at(key).get<std::string>();
}

double opt_num(const json& j, const char* key, double def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number()) throw FormatError(ctx + ": key `" + key + "` must be a number");
    return j.at(key).get<double>();
}

int opt_int(const json& j, const char* key, int def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number_integer())
        throw FormatError(ctx + ": key `" + key + "` must be an integer");
    return j.at(key).get<int>();
}

bool opt_bool(const json& j, const char* key, bool def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_boolean()) throw FormatError(ctx + ": key `" + key + "` must be a boolean");
    return j.at(key).get<bool>();
}

std::uint64_t opt_u64(const json& j, const char* key, std::uint64_t def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number_unsigned() && !j.at(key).is_number_integer())
        throw FormatError(ctx + ": key `" + key + "` must be a non-negative integer");
    return j.at(key).get<std::uint64_t>();
}

GroupRef parse_group(const json& j, const std::string& ctx) {
    check_keys(j, ctx, {"dataset", "label"});
    return {req_str(j, "dataset", ctx), req_str(j, "label", ctx)};
}

std::vector<Combination> parse_combinations(const json& j, const std::string& ctx) {
    if (!j.contains("combinations") || !j.at("combinations").is_array() ||
        j.at("combinations").empty())
        throw FormatError(ctx + ": `combinations` must be a nonempty array");
    std::vector<Combination> out;
    for (const auto& c : j.at("combinations")) {
        const std::string cctx = ctx + ".combinations[" + std::to_string(out.size()) + "]";
        check_keys(c, cctx, {"a", "b"});
        if (!c.contains("a") || !c.contains("b"))
            throw FormatError(cctx + ": needs both `a` and `b` groups");
        out.push_back({parse_group(c.at("a"), cctx + ".a"), parse_group(c.at("b"), cctx + ".b")});
    }
    return out;
}

imgproc::AugStep parse_step(const json& j, const std::string& ctx) {
    const std::string op = req_str(j, "op", ctx);
    if (op == "hist_eq") {
        check_keys(j, ctx, {"op"});
        return imgproc::HistEqStep{};
    }
    if (op == "gamma") {
        check_keys(j, ctx, {"op", "g"});
        return imgproc::GammaStep{opt_num(j, "g", 1.5, ctx)};
    }
    if (op == "clahe") {
        check_keys(j, ctx, {"op", "clip", "tiles_x", "tiles_y"});
        return imgproc::ClaheStep{opt_num(j, "clip", 40.0, ctx), opt_int(j, "tiles_x", 8, ctx),
                                  opt_int(j, "tiles_y", 8, ctx)};
    }
    if (op == "unsharp") {
        check_keys(j, ctx, {"op", "radius", "amount"});
        return imgproc::UnsharpStep{opt_num(j, "radius", 1.0, ctx), opt_num(j, "amount", 1.0, ctx)};
    }
    throw ParamError(ctx + ": unknown op `" + op + "`");
}

imgproc::AugmentRecipe parse_steps(const json& arr, const std::string& ctx) {
    if (!arr.is_array()) throw FormatError(ctx + ": must be an array of steps");
    imgproc::AugmentRecipe steps;
    for (const auto& s : arr)
        steps.push_back(parse_step(s, ctx + "[" + std::to_string(steps.size()) + "]"));
    return steps;
}

std::vector<RecipeSpec> parse_recipes(const json& j, const std::string& ctx) {
    if (!j.contains("recipes")) return {{"identity", {}}};
    const json& arr = j.at("recipes");
    if (!arr.is_array() || arr.empty())
        throw FormatError(ctx + ": `recipes` must be a nonempty array");
    std::vector<RecipeSpec> out;
    std::set<std::string> names;
    for (const auto& r : arr) {
        const std::string rctx = ctx + ".recipes[" + std::to_string(out.size()) + "]";
        check_keys(r, rctx, {"name", "steps"});
        RecipeSpec spec;
        spec.name = req_str(r, "name", rctx);
        if (!names.insert(spec.name).second)
            throw ValidationError(rctx + ": duplicate recipe name `" + spec.name + "`");
        if (!r.contains("steps")) throw FormatError(rctx + ": missing `steps`");
        spec.steps = parse_steps(r.at("steps"), rctx + ".steps");
        out.push_back(std::move(spec));
    }
    return out;
}

embed::TsneParams parse_tsne_params(const json& j, const std::string& ctx) {
    embed::TsneParams p;
    if (!j.contains("tsne")) return p;
    const json& t = j.at("tsne");
    check_keys(t, ctx + ".tsne",
               {"perplexity", "learning_rate", "iterations", "early_exaggeration_factor",
                "early_exaggeration_iters", "momentum_initial", "momentum_final",
                "momentum_switch_iter", "init_scale", "trace_stride", "pca_reduce", "pca_dims"});
    const std::string c = ctx + ".tsne";
    p.perplexity = opt_num(t, "perplexity", p.perplexity, c);
    p.learning_rate = opt_num(t, "learning_rate", p.learning_rate, c);
    p.iterations = opt_int(t, "iterations", p.iterations, c);
    p.early_exaggeration_factor = opt_num(t, "early_exaggeration_factor", p.early_exaggeration_factor, c);
    p.early_exaggeration_iters = opt_int(t, "early_exaggeration_iters", p.early_exaggeration_iters, c);
    p.momentum_initial = opt_num(t, "momentum_initial", p.momentum_initial, c);
    p.momentum_final = opt_num(t, "momentum_final", p.momentum_final, c);
    p.momentum_switch_iter = opt_int(t, "momentum_switch_iter", p.momentum_switch_iter, c);
    p.init_scale = opt_num(t, "init_scale", p.init_scale, c);
    p.trace_stride = opt_int(t, "trace_stride", p.trace_stride, c);
    p.pca_reduce = opt_bool(t, "pca_reduce", p.pca_reduce, c);
    p.pca_dims = opt_int(t, "pca_dims", p.pca_dims, c);
    return p;
}

svm::TrainOptions parse_svm_options(const json& j, const std::string& ctx) {
    svm::TrainOptions o;
    if (!j.contains("svm")) return o;
    const json& s = j.at("svm");
    const std::string c = ctx + ".svm";
    check_keys(s, c, {"kernel", "C", "gamma", "tol", "max_passes"});
    if (s.contains("kernel")) {
        const std::string k = req_str(s, "kernel", c);
        if (k == "rbf")
            o.kernel.type = svm::KernelType::Rbf;
        else if (k == "linear")
            o.kernel.type = svm::KernelType::Linear;
        else
            throw ParamError(c + ": kernel must be `rbf` or `linear`");
    }
    o.kernel.gamma = opt_num(s, "gamma", o.kernel.gamma, c);
    o.C = opt_num(s, "C", o.C, c);
    o.tol = opt_num(s, "tol", o.tol, c);
    o.max_passes = opt_int(s, "max_passes", o.max_passes, c);
    return o;
}

void parse_net(const json& j, nn::NetConfig& net, const std::string& ctx) {
    if (!j.contains("net")) return;
    const json& n = j.at("net");
    const std::string c = ctx + ".net";
    check_keys(n, c, {"conv1_channels", "conv2_channels", "dense_units", "dropout_p"});
    net.conv1_channels = opt_int(n, "conv1_channels", net.conv1_channels, c);
    net.conv2_channels = opt_int(n, "conv2_channels", net.conv2_channels, c);
    net.dense_units = opt_int(n, "dense_units", net.dense_units, c);
    net.dropout_p = opt_num(n, "dropout_p", net.dropout_p, c);
}

void parse_train_params(const json& j, nn::TrainParams& tp, const std::string& ctx) {
    if (!j.contains("train")) return;
    const json& t = j.at("train");
    const std::string c = ctx + ".train";
    check_keys(t, c, {"epochs", "lr", "batch_size"});
    tp.epochs = opt_int(t, "epochs", tp.epochs, c);
    tp.lr = opt_num(t, "lr", tp.lr, c);
    tp.batch_size = opt_int(t, "batch_size", tp.batch_size, c);
}

void parse_augment(const json& j, nn::AugmentPolicy& aug, const std::string& ctx) {
    if (!j.contains("augment")) return;
    const json& a = j.at("augment");
    const std::string c = ctx + ".augment";
    check_keys(a, c, {"max_rotation_deg", "hflip_prob"});
    aug.max_rotation_deg = opt_num(a, "max_rotation_deg", aug.max_rotation_deg, c);
    aug.hflip_prob = opt_num(a, "hflip_prob", aug.hflip_prob, c);
}

// ------------------------------------------------------ config echo (JSON)

json group_to_json(const GroupRef& g) {
    return json{{"dataset", g.dataset}, {"label", g.label}};
}

json combinations_to_json(const std::vector<Combination>& cs) {
    json arr = json::array();
    for (const auto& c : cs)
        arr.push_back(json{{"a", group_to_json(c.a)}, {"b", group_to_json(c.b)}});
    return arr;
}

json step_to_json(const imgproc::AugStep& step) {
    json j;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, imgproc::HistEqStep>) {
                j["op"] = "hist_eq";
            } else if constexpr (std::is_same_v<T, imgproc::GammaStep>) {
                j["op"] = "gamma";
                j["g"] = s.g;
            } else if constexpr (std::is_same_v<T, imgproc::ClaheStep>) {
                j["op"] = "clahe";
                j["clip"] = s.clip;
                j["tiles_x"] = s.tiles_x;
                j["tiles_y"] = s.tiles_y;
            } else {
                j["op"] = "unsharp";
                j["radius"] = s.radius;
                j["amount"] = s.amount;
            }
        },
        step);
    return j;
}

json steps_to_json(const imgproc::AugmentRecipe& steps) {
    json arr = json::array();
    for (const auto& s : steps) arr.push_back(step_to_json(s));
    return arr;
}

json tsne_params_to_json(const embed::TsneParams& p) {
    return json{{"perplexity", p.perplexity},
                {"learning_rate", p.learning_rate},
                {"iterations", p.iterations},
                {"early_exaggeration_factor", p.early_exaggeration_factor},
                {"early_exaggeration_iters", p.early_exaggeration_iters},
                {"momentum_initial", p.momentum_initial},
                {"momentum_final", p.momentum_final},
                {"momentum_switch_iter", p.momentum_switch_iter},
                {"init_scale", p.init_scale},
                {"trace_stride", p.trace_stride},
                {"pca_reduce", p.pca_reduce},
                {"pca_dims", p.pca_dims}};
}

json svm_options_to_json(const svm::TrainOptions& o) {
    return json{{"kernel", o.kernel.type == svm::KernelType::Rbf ? "rbf" : "linear"},
                {"gamma", o.kernel.gamma},
                {"C", o.C},
                {"tol", o.tol},
                {"max_passes", o.max_passes}};
}

json net_to_json(const nn::NetConfig& n) {
    return json{{"conv1_channels", n.conv1_channels},
                {"conv2_channels", n.conv2_channels},
                {"dense_units", n.dense_units},
                {"dropout_p", n.dropout_p}};
}

json train_params_to_json(const nn::TrainParams& tp) {
    return json{{"epochs", tp.epochs}, {"lr", tp.lr}, {"batch_size", tp.batch_size}};
}

json augment_to_json(const nn::AugmentPolicy& a) {
    return json{{"max_rotation_deg", a.max_rotation_deg}, {"hflip_prob", a.hflip_prob}};
}

// --------------------------------------------------------- report writing

const char* kCsvHeader =
    "run,section,item,group_a,group_b,recipe,status,accuracy,precision,recall,auroc,f1_score,"
    "error\n";

std::string group_display(const json& cell, const char* key) {
    if (!cell.contains(key)) return "";
    const json& g = cell.at(key);
    return g.at("dataset").get<std::string>() + "/" + g.at("label").get<std::string>();
}

std::string cell_num(const json& cell, const char* key) {
    if (!cell.contains(key) || !cell.at(key).is_number()) return "";
    return cell.at(key).dump();
}

void append_rows(std::string& csv, const json& report, const std::string& run_name) {
    const std::string kind = report.at("kind").get<std::string>();
    if (kind == "merged") {
        for (const auto& run : report.at("runs"))
            append_rows(csv, run.at("report"), run.at("name").get<std::string>());
        return;
    }
    for (const auto& cell : report.at("cells")) {
        std::string error_msg;
        if (cell.contains("error")) error_msg = cell.at("error").at("message").get<std::string>();
        csv += csv_escape(run_name) + ',' + csv_escape(kind) + ',' +
               csv_escape(cell.value("item", std::string())) + ',' +
               csv_escape(group_display(cell, "group_a")) + ',' +
               csv_escape(group_display(cell, "group_b")) + ',' +
               csv_escape(cell.value("recipe", std::string())) + ',' +
               cell.value("status", std::string()) + ',' + cell_num(cell, "accuracy") + ',' +
               cell_num(cell, "precision") + ',' + cell_num(cell, "recall") + ',' +
               cell_num(cell, "auroc") + ',' + cell_num(cell, "f1_score") + ',' +
               csv_escape(error_msg) + '\n';
    }
}

bool report_has_error(const json& report) {
    if (report.at("kind").get<std::string>() == "merged") {
        for (const auto& run : report.at("runs"))
            if (report_has_error(run.at("report"))) return true;
        return false;
    }
    for (const auto& cell : report.at("cells"))
        if (cell.value("status", std::string()) == "error") return true;
    return false;
}

void write_report_files(const fs::path& out_dir, const json& report) {
    write_text_file(out_dir / "report.json", report.dump(2) + "\n");
    std::string csv = kCsvHeader;
    append_rows(csv, report, "");
    write_text_file(out_dir / "report.csv", csv);
}

void write_timings(const fs::path& out_dir,
                   const std::vector<std::pair<std::string, double>>& entries, double total) {
    json j;
    j["entries"] = json::array();
    for (const auto& [name, secs] : entries)
        j["entries"].push_back(json{{"name", name}, {"seconds", secs}});
    j["total_seconds"] = total;
    write_text_file(out_dir / "timings.json", j.dump(2) + "\n");
}

// ------------------------------------------------------- shared run logic

GrayImage load_resized(const std::string& path, int size) {
    GrayImage img = io::load_image(path);
    if (img.width == size && img.height == size) return img;
    return imgproc::resize(img, size, size, imgproc::ResizeMethod::Bilinear);
}

// Sampling seeds use high stream ids so they never collide with the
// per-recipe cell streams.
constexpr std::uint64_t kSampleStreamA = 1001;
constexpr std::uint64_t kSampleStreamB = 1002;

struct GroupSamples {
    std::vector<corpus::SampleRef> a;
    std::vector<corpus::SampleRef> b;
};

// One draw per group; a self-pair takes a single double-size draw from
// the group and halves it, so the two sides are disjoint by construction.
GroupSamples sample_combination(const corpus::Manifest& m, const Combination& comb, int per_group,
                                std::uint64_t comb_seed) {
    GroupSamples out;
    const auto n = static_cast<std::size_t>(per_group);
    if (comb.self_pair()) {
        auto ss = corpus::sample(m, comb.a.dataset, comb.a.label, 2 * n,
                                 mix_seed(comb_seed, kSampleStreamA));
        out.a.assign(ss.refs.begin(), ss.refs.begin() + static_cast<std::ptrdiff_t>(n));
        out.b.assign(ss.refs.begin() + static_cast<std::ptrdiff_t>(n), ss.refs.end());
    } else {
        out.a = corpus::sample(m, comb.a.dataset, comb.a.label, n, mix_seed(comb_seed, kSampleStreamA))
                    .refs;
        out.b = corpus::sample(m, comb.b.dataset, comb.b.label, n, mix_seed(comb_seed, kSampleStreamB))
                    .refs;
    }
    return out;
}

struct PoolSamples {
    std::vector<corpus::SampleRef> train_a, train_b, test_a, test_b;
};

// Train and test pools per group come from one draw per group (train
// first, test after), so the pools are disjoint; self-pairs halve a
// single double-size draw first.
PoolSamples sample_pools(const corpus::Manifest& m, const Combination& comb, int train_n,
                         int test_n, std::uint64_t comb_seed) {
    PoolSamples out;
    const auto tr = static_cast<std::size_t>(train_n);
    const auto te = static_cast<std::size_t>(test_n);
    auto split_pool = [&](const std::vector<corpus::SampleRef>& refs,
                          std::vector<corpus::SampleRef>& train_out,
                          std::vector<corpus::SampleRef>& test_out) {
        train_out.assign(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(tr));
        test_out.assign(refs.begin() + static_cast<std::ptrdiff_t>(tr), refs.end());
    };
    if (comb.self_pair()) {
        auto ss = corpus::sample(m, comb.a.dataset, comb.a.label, 2 * (tr + te),
                                 mix_seed(comb_seed, kSampleStreamA));
        std::vector<corpus::SampleRef> half_a(ss.refs.begin(),
                                              ss.refs.begin() + static_cast<std::ptrdiff_t>(tr + te));
        std::vector<corpus::SampleRef> half_b(ss.refs.begin() + static_cast<std::ptrdiff_t>(tr + te),
                                              ss.refs.end());
        split_pool(half_a, out.train_a, out.test_a);
        split_pool(half_b, out.train_b, out.test_b);
    } else {
        auto sa = corpus::sample(m, comb.a.dataset, comb.a.label, tr + te,
                                 mix_seed(comb_seed, kSampleStreamA));
        auto sb = corpus::sample(m, comb.b.dataset, comb.b.label, tr + te,
                                 mix_seed(comb_seed, kSampleStreamB));
        split_pool(sa.refs, out.train_a, out.test_a);
        split_pool(sb.refs, out.train_b, out.test_b);
    }
    return out;
}

std::vector<GrayImage> load_set(const std::vector<corpus::SampleRef>& refs, int size) {
    std::vector<GrayImage> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back(load_resized(r.path, size));
    return out;
}

// Chunked evaluation keeps activation memory bounded for large pools.
constexpr std::size_t kEvalChunk = 64;

std::vector<int> predict_all(const nn::ConvNet& net, const std::vector<GrayImage>& imgs, int size) {
    std::vector<int> out;
    out.reserve(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); i += kEvalChunk) {
        const std::size_t j = std::min(imgs.size(), i + kEvalChunk);
        std::vector<GrayImage> chunk(imgs.begin() + static_cast<std::ptrdiff_t>(i),
                                     imgs.begin() + static_cast<std::ptrdiff_t>(j));
        auto preds = nn::predict_classes(net, nn::make_batch(chunk, size));
        out.insert(out.end(), preds.begin(), preds.end());
    }
    return out;
}

std::vector<std::vector<double>> predict_probs(const nn::ConvNet& net,
                                               const std::vector<GrayImage>& imgs, int size,
                                               int num_classes) {
    std::vector<std::vector<double>> out;
    out.reserve(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); i += kEvalChunk) {
        const std::size_t j = std::min(imgs.size(), i + kEvalChunk);
        std::vector<GrayImage> chunk(imgs.begin() + static_cast<std::ptrdiff_t>(i),
                                     imgs.begin() + static_cast<std::ptrdiff_t>(j));
        nn::Tensor probs = nn::forward(net, nn::make_batch(chunk, size), false);
        for (std::size_t r = 0; r < chunk.size(); ++r)
            out.emplace_back(probs.data.begin() + static_cast<std::ptrdiff_t>(r * num_classes),
                             probs.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * num_classes));
    }
    return out;
}

double accuracy_of(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size() || truth.empty())
        throw ValidationError("accuracy: size mismatch or empty prediction set");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

// Fraction of the heatmap's mass (after upsampling to image size) that
// falls inside the window; an all-zero map reports 0.
double window_mass_fraction(const nn::GradCamMap& map, int size, const MassWindow& w) {
    GrayImage up = nn::upsample_heatmap(map, size, size);
    double total = 0.0;
    for (double v : up.pixels) total += v;
    if (total <= 0.0) return 0.0;
    const int x0 = std::max(0, w.x), y0 = std::max(0, w.y);
    const int x1 = std::min(size, w.x + w.width), y1 = std::min(size, w.y + w.height);
    double inside = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) inside += up.at(x, y);
    return inside / total;
}

std::string rel_to_manifest(const std::string& path, const fs::path& manifest_dir) {
    std::error_code ec;
    fs::path rel = fs::relative(path, manifest_dir, ec);
    if (ec || rel.empty() || rel.is_absolute() || rel.native().starts_with(".."))
        return fs::path(path).filename().string();
    return rel.generic_string();
}

} // namespace

// ------------------------------------------------------------- config API

TsneSvmConfig load_tsne_svm_config(const fs::path& path) {
    const json j = read_json_file(path);
    const std::string ctx = "tsne-svm config";
    check_keys(j, ctx,
               {"manifest", "output_dir", "seed", "combinations", "samples_per_group", "image_size",
                "train_fraction", "recipes", "tsne", "svm"});
    TsneSvmConfig cfg;
    cfg.manifest = req_str(j, "manifest", ctx);
    cfg.output_dir = req_str(j, "output_dir", ctx);
    cfg.seed = opt_u64(j, "seed", cfg.seed, ctx);
    cfg.combinations = parse_combinations(j, ctx);
    cfg.samples_per_group = opt_int(j, "samples_per_group", cfg.samples_per_group, ctx);
    cfg.image_size = opt_int(j, "image_size", cfg.image_size, ctx);
    cfg.train_fraction = opt_num(j, "train_fraction", cfg.train_fraction, ctx);
    cfg.recipes = parse_recipes(j, ctx);
    cfg.tsne = parse_tsne_params(j, ctx);
    cfg.svm_opts = parse_svm_options(j, ctx);
    if (cfg.samples_per_group < 3) throw ParamError(ctx + ": samples_per_group must be >= 3");
    if (cfg.image_size < 4) throw ParamError(ctx + ": image_size must be >= 4");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw ParamError(ctx + ": train_fraction must lie in (0,1)");
    return cfg;
}

GradcamConfig load_gradcam_config(const fs::path& path) {
    const json j = read_json_file(path);
    const std::string ctx = "gradcam config";
    check_keys(j, ctx,
               {"manifest", "output_dir", "seed", "combinations", "train_per_group",
                "test_per_group", "val_fraction", "image_size", "net", "train", "augment",
                "overlays_per_group", "mass_window"});
    GradcamConfig cfg;
    cfg.manifest = req_str(j, "manifest", ctx);
    cfg.output_dir = req_str(j, "output_dir", ctx);
    cfg.seed = opt_u64(j, "seed", cfg.seed, ctx);
    cfg.combinations = parse_combinations(j, ctx);
    cfg.train_per_group = opt_int(j, "train_per_group", cfg.train_per_group, ctx);
    cfg.test_per_group = opt_int(j, "test_per_group", cfg.test_per_group, ctx);
    cfg.val_fraction = opt_num(j, "val_fraction", cfg.val_fraction, ctx);
    cfg.image_size = opt_int(j, "image_size", cfg.image_size, ctx);
    parse_net(j, cfg.net, ctx);
    parse_train_params(j, cfg.train, ctx);
    parse_augment(j, cfg.augment, ctx);
    cfg.overlays_per_group = opt_int(j, "overlays_per_group", cfg.overlays_per_group, ctx);
    if (j.contains("mass_window")) {
        const json& w = j.at("mass_window");
        const std::string c = ctx + ".mass_window";
        check_keys(w, c, {"x", "y", "width", "height"});
        MassWindow mw;
        mw.x = opt_int(w, "x", mw.x, c);
        mw.y = opt_int(w, "y", mw.y, c);
        mw.width = opt_int(w, "width", mw.width, c);
        mw.height = opt_int(w, "height", mw.height, c);
        if (mw.width <= 0 || mw.height <= 0) throw ParamError(c + ": window must be nonempty");
        cfg.mass_window = mw;
    }
    if (cfg.train_per_group < 2 || cfg.test_per_group < 1)
        throw ParamError(ctx + ": train_per_group >= 2 and test_per_group >= 1 required");
    if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0))
        throw ParamError(ctx + ": val_fraction must lie in [0,1)");
    if (cfg.image_size < 4 || cfg.image_size % 4 != 0)
        throw ParamError(ctx + ": image_size must be a positive multiple of 4");
    if (cfg.overlays_per_group < 0 || cfg.overlays_per_group > cfg.test_per_group)
        throw ParamError(ctx + ": overlays_per_group must lie in [0, test_per_group]");
    return cfg;
}

PipelineRunConfig load_pipeline_config(const fs::path& path) {
    const json j = read_json_file(path);
    const std::string ctx = "pipeline config";
    check_keys(j, ctx,
               {"manifest", "output_dir", "mask_dir", "mask_size", "upscale_factor",
                "dilate_radius", "missing_mask", "recipe"});
    PipelineRunConfig cfg;
    cfg.manifest = req_str(j, "manifest", ctx);
    cfg.output_dir = req_str(j, "output_dir", ctx);
    if (j.contains("mask_dir")) cfg.mask_dir = req_str(j, "mask_dir", ctx);
    cfg.pipeline.mask_size = opt_int(j, "mask_size", cfg.pipeline.mask_size, ctx);
    cfg.pipeline.upscale_factor = opt_int(j, "upscale_factor", cfg.pipeline.upscale_factor, ctx);
    cfg.pipeline.dilate_radius = opt_num(j, "dilate_radius", cfg.pipeline.dilate_radius, ctx);
    if (j.contains("missing_mask")) {
        const std::string m = req_str(j, "missing_mask", ctx);
        if (m == "error")
            cfg.pipeline.missing_mask_policy = imgproc::PipelineConfig::MissingMask::Error;
        else if (m == "passthrough")
            cfg.pipeline.missing_mask_policy = imgproc::PipelineConfig::MissingMask::Passthrough;
        else
            throw ParamError(ctx + ": missing_mask must be `error` or `passthrough`");
    }
    if (j.contains("recipe")) cfg.pipeline.recipe = parse_steps(j.at("recipe"), ctx + ".recipe");
    if (cfg.pipeline.mask_size < 1 || cfg.pipeline.upscale_factor < 1 ||
        cfg.pipeline.dilate_radius < 0.0)
        throw ParamError(ctx + ": mask_size/upscale_factor/dilate_radius out of range");
    return cfg;
}

TrainConfig load_train_config(const fs::path& path) {
    const json j = read_json_file(path);
    const std::string ctx = "train config";
    check_keys(j, ctx,
               {"manifest", "output_dir", "seed", "image_size", "net", "train", "augment",
                "use_class_weights"});
    TrainConfig cfg;
    cfg.manifest = req_str(j, "manifest", ctx);
    cfg.output_dir = req_str(j, "output_dir", ctx);
    cfg.seed = opt_u64(j, "seed", cfg.seed, ctx);
    cfg.image_size = opt_int(j, "image_size", cfg.image_size, ctx);
    parse_net(j, cfg.net, ctx);
    parse_train_params(j, cfg.train, ctx);
    parse_augment(j, cfg.train.augment, ctx);
    cfg.use_class_weights = opt_bool(j, "use_class_weights", cfg.use_class_weights, ctx);
    if (cfg.image_size < 4 || cfg.image_size % 4 != 0)
        throw ParamError(ctx + ": image_size must be a positive multiple of 4");
    return cfg;
}

// ----------------------------------------------------------- probe: t-SNE

RunResult run_tsne_svm_probe(const TsneSvmConfig& cfg) {
    const corpus::Manifest manifest = corpus::load_manifest(cfg.manifest);
    fs::create_directories(cfg.output_dir / "figures");
    fs::create_directories(cfg.output_dir / "embeddings");
    fs::create_directories(cfg.output_dir / "models");

    json config_echo{{"manifest", cfg.manifest},
                     {"output_dir", cfg.output_dir.string()},
                     {"seed", cfg.seed},
                     {"combinations", combinations_to_json(cfg.combinations)},
                     {"samples_per_group", cfg.samples_per_group},
                     {"image_size", cfg.image_size},
                     {"train_fraction", cfg.train_fraction},
                     {"tsne", tsne_params_to_json(cfg.tsne)},
                     {"svm", svm_options_to_json(cfg.svm_opts)}};
    config_echo["recipes"] = json::array();
    for (const auto& r : cfg.recipes)
        config_echo["recipes"].push_back(json{{"name", r.name}, {"steps", steps_to_json(r.steps)}});

    json cells = json::array();
    bool any_error = false;
    std::vector<std::pair<std::string, double>> timings;
    Stopwatch total;

    for (std::size_t ci = 0; ci < cfg.combinations.size(); ++ci) {
        const Combination& comb = cfg.combinations[ci];
        const std::uint64_t comb_seed = mix_seed(cfg.seed, ci);
        const std::string comb_name = "comb" + std::to_string(ci);

        // Sampling and image loading happen once per combination; every
        // recipe cell shares the same drawn images.
        std::vector<GrayImage> base;
        std::size_t per_group = 0;
        std::string comb_error_kind, comb_error_msg;
        try {
            GroupSamples gs =
                sample_combination(manifest, comb, cfg.samples_per_group, comb_seed);
            per_group = gs.a.size();
            base = load_set(gs.a, cfg.image_size);
            auto imgs_b = load_set(gs.b, cfg.image_size);
            base.insert(base.end(), std::make_move_iterator(imgs_b.begin()),
                        std::make_move_iterator(imgs_b.end()));
        } catch (const Error& e) {
            comb_error_kind = error_kind(e);
            comb_error_msg = e.what();
        } catch (const std::exception& e) {
            comb_error_kind = "error";
            comb_error_msg = e.what();
        }

        for (std::size_t ri = 0; ri < cfg.recipes.size(); ++ri) {
            const RecipeSpec& recipe = cfg.recipes[ri];
            const std::uint64_t cell_seed = mix_seed(comb_seed, ri);
            const std::string cell_name = comb_name + "/" + recipe.name;
            Stopwatch sw;

            json cell{{"item", comb_name},
                      {"combination", ci},
                      {"group_a", group_to_json(comb.a)},
                      {"group_b", group_to_json(comb.b)},
                      {"recipe", recipe.name},
                      {"seed", cell_seed}};
            if (!comb_error_msg.empty()) {
                set_error(cell, comb_error_kind, comb_error_msg);
                any_error = true;
                cells.push_back(std::move(cell));
                timings.emplace_back(cell_name, sw.seconds());
                continue;
            }

            const bool ok = run_cell(cell, [&] {
                std::vector<std::vector<double>> X;
                X.reserve(base.size());
                std::vector<int> group(base.size());
                for (std::size_t i = 0; i < base.size(); ++i) {
                    GrayImage proc = imgproc::apply_recipe(base[i], recipe.steps);
                    X.push_back(std::move(proc.pixels));
                    group[i] = i < per_group ? 0 : 1;
                }

                embed::Embedding emb = embed::tsne(X, cfg.tsne, mix_seed(cell_seed, 1));

                auto [train_idx, test_idx] =
                    corpus::split_indices(X.size(), cfg.train_fraction, mix_seed(cell_seed, 2));
                if (train_idx.empty() || test_idx.empty())
                    throw ValidationError("probe split produced an empty train or test set");

                std::vector<std::array<double, 2>> xtr;
                std::vector<int> ytr;
                for (std::size_t idx : train_idx) {
                    xtr.push_back(emb.points[idx]);
                    ytr.push_back(group[idx] == 0 ? -1 : 1);
                }
                svm::TrainOptions opts = cfg.svm_opts;
                opts.seed = mix_seed(cell_seed, 3);
                svm::SvmModel model = svm::train_svm(xtr, ytr, opts);

                std::size_t correct = 0;
                for (std::size_t idx : test_idx) {
                    const int want = group[idx] == 0 ? -1 : 1;
                    if (svm::predict(model, emb.points[idx]).label == want) ++correct;
                }
                const double acc = static_cast<double>(correct) / static_cast<double>(test_idx.size());

                const std::string stem = comb_name + "_" + sanitize_name(recipe.name);
                const std::string fig_rel = "figures/" + stem + ".png";
                const std::string emb_rel = "embeddings/" + stem + ".csv";
                const std::string model_rel = "models/" + stem + ".json";
                render::render_scatter(emb.points, group, cfg.output_dir / fig_rel);

                std::string emb_csv = "index,group,dataset,label,x,y\n";
                // The two sides of a self-pair carry the same dataset tag;
                // the group column is what tells them apart.
                for (std::size_t i = 0; i < emb.points.size(); ++i) {
                    const GroupRef& g = group[i] == 0 ? comb.a : comb.b;
                    emb_csv += std::to_string(i) + ',' + (group[i] == 0 ? 'a' : 'b') + ',' +
                               csv_escape(g.dataset) + ',' + csv_escape(g.label) + ',' +
                               num_str(emb.points[i][0]) + ',' + num_str(emb.points[i][1]) + '\n';
                }
                write_text_file(cfg.output_dir / emb_rel, emb_csv);
                write_text_file(cfg.output_dir / model_rel,
                                svm::model_to_json(model).dump(2) + "\n");

                cell["accuracy"] = acc;
                cell["train_size"] = train_idx.size();
                cell["test_size"] = test_idx.size();
                cell["kl_trace"] = emb.kl_trace;
                cell["artifacts"] =
                    json{{"scatter", fig_rel}, {"embedding", emb_rel}, {"svm_model", model_rel}};
            });
            any_error = any_error || !ok;
            cells.push_back(std::move(cell));
            timings.emplace_back(cell_name, sw.seconds());
        }
    }

    json report{{"kind", "tsne_svm"}, {"config", std::move(config_echo)}, {"cells", std::move(cells)}};
    write_report_files(cfg.output_dir, report);
    write_timings(cfg.output_dir, timings, total.seconds());
    return {std::move(report), any_error};
}

// ---------------------------------------------------------- probe: ConvNet

RunResult run_gradcam_probe(const GradcamConfig& cfg) {
    const corpus::Manifest manifest = corpus::load_manifest(cfg.manifest);
    fs::create_directories(cfg.output_dir / "figures");
    fs::create_directories(cfg.output_dir / "models");

    json config_echo{{"manifest", cfg.manifest},
                     {"output_dir", cfg.output_dir.string()},
                     {"seed", cfg.seed},
                     {"combinations", combinations_to_json(cfg.combinations)},
                     {"train_per_group", cfg.train_per_group},
                     {"test_per_group", cfg.test_per_group},
                     {"val_fraction", cfg.val_fraction},
                     {"image_size", cfg.image_size},
                     {"net", net_to_json(cfg.net)},
                     {"train", train_params_to_json(cfg.train)},
                     {"augment", augment_to_json(cfg.augment)},
                     {"overlays_per_group", cfg.overlays_per_group}};
    if (cfg.mass_window)
        config_echo["mass_window"] = json{{"x", cfg.mass_window->x},
                                          {"y", cfg.mass_window->y},
                                          {"width", cfg.mass_window->width},
                                          {"height", cfg.mass_window->height}};

    json cells = json::array();
    bool any_error = false;
    std::vector<std::pair<std::string, double>> timings;
    Stopwatch total;

    for (std::size_t ci = 0; ci < cfg.combinations.size(); ++ci) {
        const Combination& comb = cfg.combinations[ci];
        const std::uint64_t comb_seed = mix_seed(cfg.seed, ci);
        const std::string comb_name = "comb" + std::to_string(ci);
        Stopwatch sw;

        json cell{{"item", comb_name},
                  {"combination", ci},
                  {"group_a", group_to_json(comb.a)},
                  {"group_b", group_to_json(comb.b)},
                  {"seed", comb_seed}};

        const bool ok = run_cell(cell, [&] {
            PoolSamples pools =
                sample_pools(manifest, comb, cfg.train_per_group, cfg.test_per_group, comb_seed);

            std::vector<GrayImage> pool_imgs = load_set(pools.train_a, cfg.image_size);
            {
                auto b = load_set(pools.train_b, cfg.image_size);
                pool_imgs.insert(pool_imgs.end(), std::make_move_iterator(b.begin()),
                                 std::make_move_iterator(b.end()));
            }
            std::vector<int> pool_labels(pool_imgs.size(), 1);
            std::fill(pool_labels.begin(),
                      pool_labels.begin() + static_cast<std::ptrdiff_t>(pools.train_a.size()), 0);

            auto [tr_idx, val_idx] = corpus::split_indices(
                pool_imgs.size(), 1.0 - cfg.val_fraction, mix_seed(comb_seed, 3));
            if (tr_idx.empty()) throw ValidationError("probe split produced an empty training set");

            nn::TrainSet train_set;
            std::vector<GrayImage> val_imgs;
            std::vector<int> val_labels;
            for (std::size_t idx : tr_idx) {
                train_set.images.push_back(pool_imgs[idx]);
                train_set.labels.push_back(pool_labels[idx]);
            }
            for (std::size_t idx : val_idx) {
                val_imgs.push_back(pool_imgs[idx]);
                val_labels.push_back(pool_labels[idx]);
            }

            std::array<std::size_t, 2> counts{0, 0};
            for (int y : train_set.labels) counts[static_cast<std::size_t>(y)]++;
            if (counts[0] == 0 || counts[1] == 0)
                throw ValidationError("training split lost one of the two groups");
            const double n_total = static_cast<double>(train_set.labels.size());
            std::vector<double> weights{n_total / (2.0 * static_cast<double>(counts[0])),
                                        n_total / (2.0 * static_cast<double>(counts[1]))};

            nn::NetConfig net_cfg = cfg.net;
            net_cfg.input_size = cfg.image_size;
            net_cfg.num_classes = 2;
            nn::ConvNet net = nn::init_net(net_cfg, mix_seed(comb_seed, 4));

            nn::TrainParams tp = cfg.train;
            tp.class_weights = std::move(weights);
            tp.augment = cfg.augment;
            tp.seed = mix_seed(comb_seed, 5);
            nn::TrainResult tres = nn::train(net, train_set, tp);

            if (!val_imgs.empty())
                cell["val_accuracy"] =
                    accuracy_of(predict_all(net, val_imgs, cfg.image_size), val_labels);

            std::vector<GrayImage> test_imgs = load_set(pools.test_a, cfg.image_size);
            {
                auto b = load_set(pools.test_b, cfg.image_size);
                test_imgs.insert(test_imgs.end(), std::make_move_iterator(b.begin()),
                                 std::make_move_iterator(b.end()));
            }
            std::vector<int> test_labels(test_imgs.size(), 1);
            std::fill(test_labels.begin(),
                      test_labels.begin() + static_cast<std::ptrdiff_t>(pools.test_a.size()), 0);
            const std::vector<int> preds = predict_all(net, test_imgs, cfg.image_size);
            cell["accuracy"] = accuracy_of(preds, test_labels);

            // Overlays: the first k test images of each group, Grad-CAM
            // taken at the predicted class.
            json overlays = json::array();
            double mass_sum = 0.0;
            std::array<double, 2> group_mass_sum{0.0, 0.0};
            std::array<int, 2> group_overlay_count{0, 0};
            const auto k = static_cast<std::size_t>(cfg.overlays_per_group);
            for (int side = 0; side < 2; ++side) {
                const auto& pool = side == 0 ? pools.test_a : pools.test_b;
                const std::size_t offset = side == 0 ? 0 : pools.test_a.size();
                for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) {
                    const std::size_t gi = offset + i;
                    nn::Tensor one = nn::make_batch({test_imgs[gi]}, cfg.image_size);
                    nn::GradCamMap cam = nn::gradcam(net, one, preds[gi]);
                    const std::string fig_rel = "figures/" + comb_name + "_" +
                                                (side == 0 ? "a" : "b") + std::to_string(i) +
                                                ".png";
                    render::render_heatmap_overlay(test_imgs[gi], cam, cfg.output_dir / fig_rel);
                    json ov{{"path", fig_rel},
                            {"group", side == 0 ? "a" : "b"},
                            {"dataset", pool[i].dataset},
                            {"label", pool[i].label},
                            {"predicted", preds[gi]},
                            {"truth", test_labels[gi]}};
                    if (cfg.mass_window) {
                        const double m =
                            window_mass_fraction(cam, cfg.image_size, *cfg.mass_window);
                        ov["mass_in_window"] = m;
                        mass_sum += m;
                        group_mass_sum[static_cast<std::size_t>(side)] += m;
                    }
                    group_overlay_count[static_cast<std::size_t>(side)]++;
                    overlays.push_back(std::move(ov));
                }
            }
            cell["overlays"] = std::move(overlays);
            if (cfg.mass_window && group_overlay_count[0] + group_overlay_count[1] > 0) {
                cell["mean_mass_in_window"] =
                    mass_sum / static_cast<double>(group_overlay_count[0] + group_overlay_count[1]);
                json by_group;
                if (group_overlay_count[0] > 0)
                    by_group["a"] = group_mass_sum[0] / group_overlay_count[0];
                if (group_overlay_count[1] > 0)
                    by_group["b"] = group_mass_sum[1] / group_overlay_count[1];
                cell["mean_mass_by_group"] = std::move(by_group);
            }

            const std::string ckpt_bin = "models/" + comb_name + ".bin";
            const std::string ckpt_json = "models/" + comb_name + ".json";
            nn::save_checkpoint(net, cfg.output_dir / ckpt_bin, cfg.output_dir / ckpt_json);

            cell["train_size"] = train_set.labels.size();
            cell["val_size"] = val_labels.size();
            cell["test_size"] = test_labels.size();
            cell["loss_history"] = tres.loss_history;
            cell["artifacts"] =
                json{{"checkpoint_data", ckpt_bin}, {"checkpoint_manifest", ckpt_json}};
        });
        any_error = any_error || !ok;
        cells.push_back(std::move(cell));
        timings.emplace_back(comb_name, sw.seconds());
    }

    json report{{"kind", "gradcam"}, {"config", std::move(config_echo)}, {"cells", std::move(cells)}};
    write_report_files(cfg.output_dir, report);
    write_timings(cfg.output_dir, timings, total.seconds());
    return {std::move(report), any_error};
}

// -------------------------------------------------------- stage-2 pipeline

RunResult run_stage2(const PipelineRunConfig& cfg) {
    const corpus::Manifest manifest = corpus::load_manifest(cfg.manifest);
    const fs::path manifest_dir = fs::path(manifest.source_path).parent_path();
    fs::create_directories(cfg.output_dir / "processed");

    json config_echo{{"manifest", cfg.manifest},
                     {"output_dir", cfg.output_dir.string()},
                     {"mask_dir", cfg.mask_dir.string()},
                     {"mask_size", cfg.pipeline.mask_size},
                     {"upscale_factor", cfg.pipeline.upscale_factor},
                     {"dilate_radius", cfg.pipeline.dilate_radius},
                     {"missing_mask",
                      cfg.pipeline.missing_mask_policy == imgproc::PipelineConfig::MissingMask::Error
                          ? "error"
                          : "passthrough"},
                     {"recipe", steps_to_json(cfg.pipeline.recipe)}};

    json cells = json::array();
    bool any_error = false;
    std::vector<std::pair<std::string, double>> timings;
    Stopwatch total;

    corpus::SampleSet out_rows;
    std::set<std::string> used_outputs;
    for (const auto& entry : manifest.entries) {
        Stopwatch sw;
        const std::string rel_in = rel_to_manifest(entry.path, manifest_dir);
        const std::string rel_out = fs::path(rel_in).replace_extension(".png").generic_string();

        json cell{{"item", rel_in}, {"output", "processed/" + rel_out}};
        const bool ok = run_cell(cell, [&] {
            if (!used_outputs.insert(rel_out).second)
                throw ValidationError("output path collision at processed/" + rel_out);
            GrayImage img = io::load_image(entry.path);
            std::optional<BinaryMask> mask;
            if (!cfg.mask_dir.empty()) {
                const fs::path mask_path =
                    cfg.mask_dir / (fs::path(entry.path).stem().string() + ".png");
                if (fs::exists(mask_path)) mask = io::load_mask(mask_path.string());
            }
            GrayImage out = imgproc::preprocess_stage2(img, mask, cfg.pipeline);
            const fs::path out_path = cfg.output_dir / "processed" / rel_out;
            fs::create_directories(out_path.parent_path());
            io::save_png_gray8(out, out_path.string());
            out_rows.refs.push_back({rel_out, entry.dataset, entry.label, entry.split});
        });
        any_error = any_error || !ok;
        cells.push_back(std::move(cell));
        timings.emplace_back(rel_in, sw.seconds());
    }

    write_text_file(cfg.output_dir / "processed" / "manifest.csv", corpus::to_csv(out_rows));

    json report{{"kind", "pipeline"},
                {"config", std::move(config_echo)},
                {"manifest", "processed/manifest.csv"},
                {"processed_count", out_rows.refs.size()},
                {"cells", std::move(cells)}};
    write_report_files(cfg.output_dir, report);
    write_timings(cfg.output_dir, timings, total.seconds());
    return {std::move(report), any_error};
}

// ------------------------------------------------------ classifier training

RunResult train_eval_classifier(const TrainConfig& cfg) {
    const corpus::Manifest manifest = corpus::load_manifest(cfg.manifest);
    fs::create_directories(cfg.output_dir / "models");

    json config_echo{{"manifest", cfg.manifest},
                     {"output_dir", cfg.output_dir.string()},
                     {"seed", cfg.seed},
                     {"image_size", cfg.image_size},
                     {"net", net_to_json(cfg.net)},
                     {"train", train_params_to_json(cfg.train)},
                     {"augment", augment_to_json(cfg.train.augment)},
                     {"use_class_weights", cfg.use_class_weights}};

    std::vector<std::pair<std::string, double>> timings;
    Stopwatch total;
    Stopwatch sw;
    json cell{{"item", "train"}, {"seed", cfg.seed}};

    const bool ok = run_cell(cell, [&] {
        std::set<std::string> class_set;
        for (const auto& e : manifest.entries) class_set.insert(e.label);
        if (class_set.size() < 2)
            throw ValidationError(
                "metrics are undefined for a single-class corpus (found " +
                std::to_string(class_set.size()) + " class)");
        const std::vector<std::string> classes(class_set.begin(), class_set.end());
        std::map<std::string, int> class_index;
        for (std::size_t i = 0; i < classes.size(); ++i)
            class_index[classes[i]] = static_cast<int>(i);
        const int k = static_cast<int>(classes.size());

        std::vector<corpus::SampleRef> train_refs, test_refs;
        for (const auto& e : manifest.entries) {
            if (!e.split) continue;
            (*e.split == corpus::Split::Train ? train_refs : test_refs).push_back(e);
        }
        if (train_refs.empty() || test_refs.empty())
            throw ValidationError("manifest needs nonempty train and test splits");

        std::map<std::string, std::size_t> train_counts;
        for (const auto& r : train_refs) train_counts[r.label]++;
        std::vector<double> weights;
        if (cfg.use_class_weights) {
            for (const auto& c : classes)
                if (train_counts.find(c) == train_counts.end())
                    throw ValidationError("class `" + c + "` has no training rows");
            const corpus::ClassWeights w = corpus::class_weights(train_counts);
            weights.resize(classes.size());
            for (std::size_t i = 0; i < classes.size(); ++i) weights[i] = w.at(classes[i]);
        }

        nn::TrainSet train_set;
        for (const auto& r : train_refs) {
            train_set.images.push_back(load_resized(r.path, cfg.image_size));
            train_set.labels.push_back(class_index.at(r.label));
        }
        std::vector<GrayImage> test_imgs;
        std::vector<int> test_labels;
        for (const auto& r : test_refs) {
            test_imgs.push_back(load_resized(r.path, cfg.image_size));
            test_labels.push_back(class_index.at(r.label));
        }

        nn::NetConfig net_cfg = cfg.net;
        net_cfg.input_size = cfg.image_size;
        net_cfg.num_classes = k;
        nn::ConvNet net = nn::init_net(net_cfg, mix_seed(cfg.seed, 1));

        nn::TrainParams tp = cfg.train;
        tp.class_weights = weights;
        tp.seed = mix_seed(cfg.seed, 2);
        nn::TrainResult tres = nn::train(net, train_set, tp);

        const std::vector<int> preds = predict_all(net, test_imgs, cfg.image_size);
        const auto probs = predict_probs(net, test_imgs, cfg.image_size, k);
        const metrics::ConfusionMatrix cm = metrics::confusion(test_labels, preds, k);
        const metrics::MetricsReport rep = metrics::summarize(cm);
        double auroc_value;
        if (k == 2) {
            std::vector<double> pos_scores(probs.size());
            for (std::size_t i = 0; i < probs.size(); ++i) pos_scores[i] = probs[i][1];
            auroc_value = metrics::auroc(pos_scores, test_labels);
        } else {
            auroc_value = metrics::auroc_macro(probs, test_labels);
        }

        // Table column order (accuracy, precision, recall, AUROC, F1) is
        // the report.csv header order; JSON keys sort alphabetically.
        cell["accuracy"] = rep.accuracy;
        cell["precision"] = rep.precision;
        cell["recall"] = rep.recall;
        cell["auroc"] = auroc_value;
        cell["f1_score"] = rep.f1;
        cell["averaging"] = rep.averaging == metrics::Averaging::Binary ? "binary" : "macro";
        cell["has_degenerate_class"] = rep.has_degenerate;
        cell["classes"] = classes;
        cell["train_size"] = train_refs.size();
        cell["test_size"] = test_refs.size();
        cell["loss_history"] = tres.loss_history;

        json confusion_rows = json::array();
        for (int t = 0; t < k; ++t) {
            json row = json::array();
            for (int p = 0; p < k; ++p) row.push_back(cm.at(t, p));
            confusion_rows.push_back(std::move(row));
        }
        cell["confusion"] = std::move(confusion_rows);
        json per_class = json::array();
        for (const auto& c : rep.per_class)
            per_class.push_back(json{{"precision", c.precision},
                                     {"recall", c.recall},
                                     {"f1_score", c.f1},
                                     {"degenerate", c.degenerate}});
        cell["per_class"] = std::move(per_class);

        const std::string ckpt_bin = "models/classifier.bin";
        const std::string ckpt_json = "models/classifier.json";
        nn::save_checkpoint(net, cfg.output_dir / ckpt_bin, cfg.output_dir / ckpt_json);
        cell["artifacts"] = json{{"checkpoint_data", ckpt_bin}, {"checkpoint_manifest", ckpt_json}};
    });
    timings.emplace_back("train", sw.seconds());

    json report{{"kind", "train"}, {"config", std::move(config_echo)},
                {"cells", json::array({std::move(cell)})}};
    write_report_files(cfg.output_dir, report);
    write_timings(cfg.output_dir, timings, total.seconds());
    return {std::move(report), !ok};
}

// ----------------------------------------------------------- report merge

RunResult merge_reports(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("report merge: not a directory: " + dir.string());
    std::vector<std::pair<std::string, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const fs::path rp = entry.path() / "report.json";
        if (fs::exists(rp)) found.emplace_back(entry.path().filename().string(), rp);
    }
    std::sort(found.begin(), found.end());
    if (found.empty())
        throw ValidationError("report merge: no <subdir>/report.json under " + dir.string());

    json runs = json::array();
    for (const auto& [name, path] : found) {
        json sub = read_json_file(path);
        const bool runner = sub.is_object() && sub.contains("kind") && sub.contains("cells");
        const bool merged = sub.is_object() && sub.value("kind", std::string()) == "merged" &&
                            sub.contains("runs");
        if (!runner && !merged)
            throw FormatError("report merge: " + path.string() + " is not a recognized report");
        runs.push_back(json{{"name", name}, {"report", std::move(sub)}});
    }

    json report{{"kind", "merged"}, {"runs", std::move(runs)}};
    const bool any_error = report_has_error(report);
    write_report_files(dir, report);
    return {std::move(report), any_error};
}

} // namespace biasaudit::audit
