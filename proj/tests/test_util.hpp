#pragma once

// Shared helpers for the test binaries: scratch directories under the
// build tree and tiny file writers.

#include <filesystem>
#include <fstream>
#include <string>

#include "biasaudit/errors.hpp"

namespace testutil {

// Fresh scratch directory (removed and recreated) under the working
// directory, namespaced per call site.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::path("test_scratch") / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw biasaudit::IoError("test helper cannot write " + path.string());
    os << text;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw biasaudit::IoError("test helper cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

} // namespace testutil
