#include "biasaudit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "biasaudit/errors.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::corpus {

namespace {

// Minimal RFC-4180 style row parser: commas split fields, double quotes
// protect embedded commas/quotes. No multi-line fields.
std::vector<std::string> parse_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
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

const std::vector<std::string> kColumns = {"path", "dataset", "label", "split"};

} // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest: " + path);

    std::string header_line;
    if (!std::getline(in, header_line))
        throw FormatError("manifest is empty (header row required): " + path);
    const auto header = parse_csv_row(header_line);
    for (const auto& col : kColumns) {
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw FormatError("manifest missing required column `" + col + "`: " + path);
    }
    if (header != kColumns)
        throw FormatError("manifest header must be exactly `path,dataset,label,split`: " + path);

    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    Manifest m;
    m.source_path = path;
    std::unordered_map<std::string, std::size_t> seen; // raw path -> first row number
    std::string line;
    std::size_t row = 1; // header was row 1
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto fields = parse_csv_row(line);
        if (fields.size() != kColumns.size()) {
            std::ostringstream os;
            os << "manifest row " << row << " has " << fields.size() << " fields, expected 4";
            throw FormatError(os.str());
        }
        SampleRef ref;
        const std::string& raw = fields[0];
        if (raw.empty()) {
            std::ostringstream os;
            os << "manifest row " << row << " has an empty path";
            throw ValidationError(os.str());
        }
        auto [it, inserted] = seen.emplace(raw, row);
        if (!inserted) {
            std::ostringstream os;
            os << "duplicate path `" << raw << "` in manifest rows " << it->second << " and "
               << row;
            throw ValidationError(os.str());
        }
        const std::filesystem::path p(raw);
        ref.path = p.is_absolute() ? raw : (base / p).lexically_normal().string();
        ref.dataset = fields[1];
        ref.label = fields[2];
        if (fields[3] == "train")
            ref.split = Split::Train;
        else if (fields[3] == "test")
            ref.split = Split::Test;
        else if (!fields[3].empty()) {
            std::ostringstream os;
            os << "manifest row " << row << ": split must be empty, `train` or `test`, got `"
               << fields[3] << "`";
            throw ValidationError(os.str());
        }
        m.entries.push_back(std::move(ref));
    }
    return m;
}

SampleSet sample(const Manifest& manifest, const std::string& dataset, const std::string& label,
                 std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        if (e.dataset == dataset && e.label == label) pool.push_back(i);
    }
    if (pool.size() < n) {
        std::ostringstream os;
        os << "requested " << n << " samples of (" << dataset << ", " << label << ") but only "
           << pool.size() << " available";
        throw InsufficientDataError(os.str(), pool.size());
    }

    // Partial Fisher-Yates: the first n slots after n swap steps are a
    // uniform without-replacement draw.
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }

    SampleSet out;
    out.seed = seed;
    std::ostringstream prov;
    prov << "sample(dataset=" << dataset << ", label=" << label << ", n=" << n
         << ", seed=" << seed << ") from " << manifest.source_path;
    out.provenance = prov.str();
    out.refs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.refs.push_back(manifest.entries[pool[i]]);
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
    if (train_fraction < 0.0 || train_fraction > 1.0)
        throw ParamError("train_fraction must lie in [0,1]");

    // floor(f*n + 0.5): round to nearest, exact halves go to train.
    auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(n) + 0.5));
    n_train = std::min(n_train, n);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<long>(n_train));
    std::vector<std::size_t> test(order.begin() + static_cast<long>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

std::pair<SampleSet, SampleSet> split(const SampleSet& set, double train_fraction,
                                      std::uint64_t seed) {
    const auto [ti, si] = split_indices(set.refs.size(), train_fraction, seed);
    SampleSet train, test;
    train.seed = test.seed = seed;
    train.provenance = set.provenance + " | train";
    test.provenance = set.provenance + " | test";
    for (std::size_t i : ti) train.refs.push_back(set.refs[i]);
    for (std::size_t i : si) test.refs.push_back(set.refs[i]);
    return {train, test};
}

ClassWeights class_weights(const std::map<std::string, std::size_t>& counts) {
    if (counts.empty()) throw ParamError("class_weights: empty count map");
    std::size_t total = 0;
    for (const auto& [cls, c] : counts) {
        if (c == 0) throw ParamError("class_weights: zero count for class `" + cls + "`");
        total += c;
    }
    const double k = static_cast<double>(counts.size());
    ClassWeights w;
    for (const auto& [cls, c] : counts)
        w[cls] = static_cast<double>(total) / (k * static_cast<double>(c));
    return w;
}

std::string to_csv(const SampleSet& set) {
    std::ostringstream os;
    os << "path,dataset,label,split\n";
    for (const auto& r : set.refs) {
        os << csv_escape(r.path) << ',' << csv_escape(r.dataset) << ',' << csv_escape(r.label)
           << ',';
        if (r.split) os << (*r.split == Split::Train ? "train" : "test");
        os << '\n';
    }
    return os.str();
}

} // namespace biasaudit::corpus
