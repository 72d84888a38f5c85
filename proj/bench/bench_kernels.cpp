// Side-by-side timings of the OpenMP kernels against their serial
// reference implementations. Inputs are seeded, so repeated runs
// benchmark identical work.

#include <benchmark/benchmark.h>

#include <vector>

#include "biasaudit/embed.hpp"
#include "biasaudit/gray_image.hpp"
#include "biasaudit/imgproc.hpp"
#include "biasaudit/rng.hpp"

namespace {

using namespace biasaudit;

GrayImage noise_image(int size, std::uint64_t seed) {
    GrayImage img(size, size);
    Rng rng(seed);
    for (double& v : img.pixels) v = rng.next_double();
    return img;
}

BinaryMask disk_mask(int size) {
    BinaryMask mask(size, size);
    const double c = (size - 1) / 2.0, r = size / 5.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            mask.at(x, y) = (x - c) * (x - c) + (y - c) * (y - c) <= r * r ? 1 : 0;
    return mask;
}

std::vector<std::vector<double>> noise_rows(int n, int d, std::uint64_t seed) {
    std::vector<std::vector<double>> X(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(d)));
    Rng rng(seed);
    for (auto& row : X)
        for (double& v : row) v = rng.next_double(-1.0, 1.0);
    return X;
}

void BM_gaussian_blur(benchmark::State& state) {
    const GrayImage img = noise_image(512, 11);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::gaussian_blur(img, 2.0));
}
BENCHMARK(BM_gaussian_blur)->Unit(benchmark::kMillisecond);

void BM_gaussian_blur_serial(benchmark::State& state) {
    const GrayImage img = noise_image(512, 11);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::serial::gaussian_blur(img, 2.0));
}
BENCHMARK(BM_gaussian_blur_serial)->Unit(benchmark::kMillisecond);

void BM_resize_bicubic(benchmark::State& state) {
    const GrayImage img = noise_image(512, 12);
    for (auto _ : state)
        benchmark::DoNotOptimize(imgproc::resize(img, 640, 360, imgproc::ResizeMethod::Bicubic));
}
BENCHMARK(BM_resize_bicubic)->Unit(benchmark::kMillisecond);

void BM_resize_bicubic_serial(benchmark::State& state) {
    const GrayImage img = noise_image(512, 12);
    for (auto _ : state)
        benchmark::DoNotOptimize(
            imgproc::serial::resize(img, 640, 360, imgproc::ResizeMethod::Bicubic));
}
BENCHMARK(BM_resize_bicubic_serial)->Unit(benchmark::kMillisecond);

void BM_clahe(benchmark::State& state) {
    const GrayImage img = noise_image(512, 13);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::clahe(img, 40.0, 8, 8));
}
BENCHMARK(BM_clahe)->Unit(benchmark::kMillisecond);

void BM_clahe_serial(benchmark::State& state) {
    const GrayImage img = noise_image(512, 13);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::serial::clahe(img, 40.0, 8, 8));
}
BENCHMARK(BM_clahe_serial)->Unit(benchmark::kMillisecond);

void BM_dilate(benchmark::State& state) {
    const BinaryMask mask = disk_mask(256);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::dilate(mask, 5.0));
}
BENCHMARK(BM_dilate)->Unit(benchmark::kMillisecond);

void BM_dilate_serial(benchmark::State& state) {
    const BinaryMask mask = disk_mask(256);
    for (auto _ : state) benchmark::DoNotOptimize(imgproc::serial::dilate(mask, 5.0));
}
BENCHMARK(BM_dilate_serial)->Unit(benchmark::kMillisecond);

void BM_pairwise_sq_dists(benchmark::State& state) {
    const auto X = noise_rows(400, 1024, 14);
    for (auto _ : state) benchmark::DoNotOptimize(embed::pairwise_sq_dists(X));
}
BENCHMARK(BM_pairwise_sq_dists)->Unit(benchmark::kMillisecond);

void BM_pairwise_sq_dists_serial(benchmark::State& state) {
    const auto X = noise_rows(400, 1024, 14);
    for (auto _ : state) benchmark::DoNotOptimize(embed::serial::pairwise_sq_dists(X));
}
BENCHMARK(BM_pairwise_sq_dists_serial)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
