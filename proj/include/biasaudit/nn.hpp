#pragma once

// A tiny from-scratch convolutional network in double precision:
// Conv(3x3, same) -> ReLU -> MaxPool(2x2) -> Conv(3x3, same) -> ReLU ->
// MaxPool(2x2) -> Flatten -> Dropout -> Dense -> ReLU -> Dense -> Softmax.
// Layer primitives are exposed individually so each one can be
// finite-difference checked in isolation.
//
// Determinism: weight init, shuffling, dropout masks and augmentation all
// derive from explicit seeds; parallel loops only ever reduce in fixed
// index order, so results do not depend on thread count.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "biasaudit/gray_image.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
};

namespace layers {

// in [n,ic,h,w], w [oc,ic,3,3], b [oc] -> [n,oc,h,w]; stride 1, zero pad 1.
Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b);
void conv2d_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin,
                     Tensor* gw, Tensor* gb);

Tensor relu(const Tensor& in);
void relu_backward(const Tensor& in, const Tensor& gout, Tensor* gin);

// [n,c,h,w] -> [n,c,h/2,w/2]; h and w must be even. Ties route to the
// first cell in scan order, both forward and backward.
Tensor maxpool2(const Tensor& in);
void maxpool2_backward(const Tensor& in, const Tensor& gout, Tensor* gin);

// in [n,d], w [u,d], b [u] -> [n,u]
Tensor dense(const Tensor& in, const Tensor& w, const Tensor& b);
void dense_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin, Tensor* gw,
                    Tensor* gb);

Tensor softmax_rows(const Tensor& logits);

// Inverted dropout: kept entries scale by 1/(1-p) so evaluation needs no
// rescale. The mask (0 or 1/(1-p) per entry) is written to *mask when
// requested; backward is multiplication by the same mask.
Tensor dropout(const Tensor& in, double p, Rng& rng, Tensor* mask);

} // namespace layers

struct NetConfig {
    int input_size = 36; // square side, divisible by 4 (two 2x2 pools)
    int conv1_channels = 8;
    int conv2_channels = 16;
    int dense_units = 128;
    int num_classes = 2;
    double dropout_p = 0.5;
};

struct ConvNet {
    NetConfig cfg;
    // Parameter order is the contract for grads, SGD and checkpoints:
    // conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b.
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b;

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
};

// He-scaled Gaussian weights (stddev sqrt(2/fan_in)), zero biases.
ConvNet init_net(const NetConfig& cfg, std::uint64_t seed);

// Probabilities [n,K]; rows sum to 1. train_mode requires an rng for the
// dropout mask and is the only source of stochasticity.
Tensor forward(const ConvNet& net, const Tensor& batch, bool train_mode, Rng* rng = nullptr);

// Same pass stopped before the softmax.
Tensor forward_logits(const ConvNet& net, const Tensor& batch, bool train_mode, Rng* rng = nullptr);

struct LossGrads {
    double loss = 0.0;
    double weight_sum = 0.0;       // sum of per-sample class weights in the batch
    std::vector<Tensor> grads;      // aligned with ConvNet::params()
};

// Weighted cross-entropy: loss = -sum w_{y_i} log p_{i,y_i} / sum w_{y_i}.
// The 1e-12 floor guards only the log; gradients use the exact softmax
// derivative. class_weights is indexed by class and may be empty (all 1).
LossGrads loss_and_grads(const ConvNet& net, const Tensor& batch, const std::vector<int>& labels,
                         const std::vector<double>& class_weights, bool train_mode,
                         Rng* rng = nullptr);

struct AugmentPolicy {
    double max_rotation_deg = 0.0;
    double hflip_prob = 0.0;
};

struct TrainSet {
    std::vector<GrayImage> images; // already at cfg.input_size
    std::vector<int> labels;
};

struct TrainParams {
    int epochs = 20;
    double lr = 0.01;
    int batch_size = 32;
    std::vector<double> class_weights; // empty = unweighted
    AugmentPolicy augment;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_history; // per-epoch weighted mean loss
};

// Plain SGD, per-epoch seeded shuffle, per-sample seeded augmentation.
TrainResult train(ConvNet& net, const TrainSet& data, const TrainParams& tp);

// Argmax class per row (ties toward the lower class index).
std::vector<int> predict_classes(const ConvNet& net, const Tensor& batch);

// Images -> [n,1,S,S] batch tensor; every image must be S x S.
Tensor make_batch(const std::vector<GrayImage>& images, int input_size);

struct GradCamMap {
    int width = 0, height = 0;
    std::vector<double> values; // >= 0, max entry 1 unless the map is all zero
};

// alpha_k = spatial mean of d(logit_class)/dA_k over the last conv layer's
// post-ReLU feature map A; map = ReLU(sum_k alpha_k A_k), max-normalized.
GradCamMap gradcam(const ConvNet& net, const Tensor& img, int class_index);

// Bilinear upsample for overlay rendering; target at least the map size.
GrayImage upsample_heatmap(const GradCamMap& map, int w, int h);

// Flat little-endian float64 parameter dump plus a JSON shape manifest.
void save_checkpoint(const ConvNet& net, const std::filesystem::path& bin_path,
                     const std::filesystem::path& manifest_path);
ConvNet load_checkpoint(const std::filesystem::path& bin_path,
                        const std::filesystem::path& manifest_path);

} // namespace biasaudit::nn
