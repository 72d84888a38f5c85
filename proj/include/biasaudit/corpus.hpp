#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace biasaudit::corpus {

enum class Split { Train, Test };

/// One labelled, dataset-tagged image reference.
struct SampleRef {
    std::string path;    // resolved relative to the manifest directory
    std::string dataset; // source-dataset tag
    std::string label;   // class name
    std::optional<Split> split;
};

/// Parsed manifest: one SampleRef per CSV data row, order preserved.
struct Manifest {
    std::vector<SampleRef> entries;
    std::string source_path; // manifest file this was loaded from
};

/// Result of a sampling query; resampling with the same (manifest,
/// query, seed) yields an identical ordered list.
struct SampleSet {
    std::vector<SampleRef> refs;
    std::uint64_t seed = 0;
    std::string provenance; // human-readable description of the query
};

using ClassWeights = std::map<std::string, double>;

/// Reads the manifest CSV (header `path,dataset,label,split`, UTF-8).
/// Relative paths are resolved against the manifest's directory.
/// Throws FormatError for a missing/misnamed column and ValidationError
/// for duplicate paths (the message cites both offending rows).
Manifest load_manifest(const std::string& path);

/// Uniform sample of n distinct entries matching (dataset, label),
/// without replacement, deterministic under seed. Throws
/// InsufficientDataError when fewer than n entries match.
SampleSet sample(const Manifest& manifest, const std::string& dataset,
                 const std::string& label, std::size_t n, std::uint64_t seed);

/// Random partition into train/test. |train| = floor(f*n + 0.5), i.e.
/// round to nearest with ties toward train. Membership is random under
/// seed; each part keeps the input order.
std::pair<SampleSet, SampleSet> split(const SampleSet& set, double train_fraction,
                                      std::uint64_t seed);

/// Inverse-frequency class weights: w_c = N / (K * N_c). Balanced
/// counts give all-ones. Throws ParamError on a zero count.
ClassWeights class_weights(const std::map<std::string, std::size_t>& counts);

/// Serializes a SampleSet in the manifest CSV format (byte-stable, used
/// by the determinism checks and by the stage-2 output manifest).
std::string to_csv(const SampleSet& set);

/// Random index partition used wherever a split must act on plain
/// indices (embedded points, loaded batches). Same rounding rule and
/// determinism contract as split().
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_indices(std::size_t n, double train_fraction, std::uint64_t seed);

} // namespace biasaudit::corpus
