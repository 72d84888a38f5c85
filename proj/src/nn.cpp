#include "biasaudit/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "biasaudit/errors.hpp"
#include "biasaudit/imgproc.hpp"

namespace biasaudit::nn {

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must not be empty");
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void expect_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape != shape) throw ShapeError(std::string(what) + ": unexpected tensor shape");
}

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.shape.size() != rank) throw ShapeError(std::string(what) + ": unexpected tensor rank");
}

} // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}

namespace layers {

Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b) {
    expect_rank(in, 4, "conv2d input");
    expect_rank(w, 4, "conv2d weights");
    const int n = in.dim(0), ic = in.dim(1), h = in.dim(2), wd = in.dim(3);
    const int oc = w.dim(0);
    if (w.dim(1) != ic || w.dim(2) != 3 || w.dim(3) != 3)
        throw ShapeError("conv2d: weights must be [oc,ic,3,3] matching input channels");
    expect_shape(b, {oc}, "conv2d bias");

    Tensor out({n, oc, h, wd});
    const std::size_t in_cs = static_cast<std::size_t>(h) * wd;   // channel stride
    const std::size_t in_ns = in_cs * static_cast<std::size_t>(ic);
    const std::size_t out_ns = in_cs * static_cast<std::size_t>(oc);
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int oi = 0; oi < oc; ++oi) {
            const double* wbase =
                &w.data[static_cast<std::size_t>(oi) * static_cast<std::size_t>(ic) * 9];
            double* obase = &out.data[static_cast<std::size_t>(ni) * out_ns +
                                      static_cast<std::size_t>(oi) * in_cs];
            const double bias = b.data[static_cast<std::size_t>(oi)];
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < wd; ++x) {
                    double acc = bias;
                    for (int ci = 0; ci < ic; ++ci) {
                        const double* ibase = &in.data[static_cast<std::size_t>(ni) * in_ns +
                                                       static_cast<std::size_t>(ci) * in_cs];
                        const double* wk = wbase + static_cast<std::size_t>(ci) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sx = x + kx - 1;
                                if (sx < 0 || sx >= wd) continue;
                                acc += wk[ky * 3 + kx] *
                                       ibase[static_cast<std::size_t>(sy) * wd + sx];
                            }
                        }
                    }
                    obase[static_cast<std::size_t>(y) * wd + x] = acc;
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin,
                     Tensor* gw, Tensor* gb) {
    const int n = in.dim(0), ic = in.dim(1), h = in.dim(2), wd = in.dim(3);
    const int oc = w.dim(0);
    expect_shape(gout, {n, oc, h, wd}, "conv2d_backward gout");

    const std::size_t cs = static_cast<std::size_t>(h) * wd;
    const std::size_t in_ns = cs * static_cast<std::size_t>(ic);
    const std::size_t out_ns = cs * static_cast<std::size_t>(oc);

    if (gin) {
        *gin = Tensor({n, ic, h, wd});
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni) {
            for (int oi = 0; oi < oc; ++oi) {
                const double* gbase = &gout.data[static_cast<std::size_t>(ni) * out_ns +
                                                 static_cast<std::size_t>(oi) * cs];
                const double* wbase =
                    &w.data[static_cast<std::size_t>(oi) * static_cast<std::size_t>(ic) * 9];
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < wd; ++x) {
                        const double g = gbase[static_cast<std::size_t>(y) * wd + x];
                        for (int ci = 0; ci < ic; ++ci) {
                            double* ibase = &gin->data[static_cast<std::size_t>(ni) * in_ns +
                                                       static_cast<std::size_t>(ci) * cs];
                            const double* wk = wbase + static_cast<std::size_t>(ci) * 9;
                            for (int ky = 0; ky < 3; ++ky) {
                                const int sy = y + ky - 1;
                                if (sy < 0 || sy >= h) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int sx = x + kx - 1;
                                    if (sx < 0 || sx >= wd) continue;
                                    ibase[static_cast<std::size_t>(sy) * wd + sx] +=
                                        g * wk[ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if (gw) {
        *gw = Tensor(w.shape);
#pragma omp parallel for schedule(static)
        for (int oi = 0; oi < oc; ++oi) {
            for (int ci = 0; ci < ic; ++ci) {
                double* wk = &gw->data[(static_cast<std::size_t>(oi) * ic + ci) * 9];
                for (int ni = 0; ni < n; ++ni) {
                    const double* gbase = &gout.data[static_cast<std::size_t>(ni) * out_ns +
                                                     static_cast<std::size_t>(oi) * cs];
                    const double* ibase = &in.data[static_cast<std::size_t>(ni) * in_ns +
                                                   static_cast<std::size_t>(ci) * cs];
                    for (int y = 0; y < h; ++y) {
                        for (int x = 0; x < wd; ++x) {
                            const double g = gbase[static_cast<std::size_t>(y) * wd + x];
                            for (int ky = 0; ky < 3; ++ky) {
                                const int sy = y + ky - 1;
                                if (sy < 0 || sy >= h) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int sx = x + kx - 1;
                                    if (sx < 0 || sx >= wd) continue;
                                    wk[ky * 3 + kx] +=
                                        g * ibase[static_cast<std::size_t>(sy) * wd + sx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if (gb) {
        *gb = Tensor({oc});
#pragma omp parallel for schedule(static)
        for (int oi = 0; oi < oc; ++oi) {
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const double* gbase = &gout.data[static_cast<std::size_t>(ni) * out_ns +
                                                 static_cast<std::size_t>(oi) * cs];
                for (std::size_t k = 0; k < cs; ++k) acc += gbase[k];
            }
            gb->data[static_cast<std::size_t>(oi)] = acc;
        }
    }
}

Tensor relu(const Tensor& in) {
    Tensor out(in.shape);
    const auto n = static_cast<long long>(in.numel());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        out.data[s] = in.data[s] > 0.0 ? in.data[s] : 0.0;
    }
    return out;
}

void relu_backward(const Tensor& in, const Tensor& gout, Tensor* gin) {
    if (in.shape != gout.shape) throw ShapeError("relu_backward: shape mismatch");
    *gin = Tensor(in.shape);
    const auto n = static_cast<long long>(in.numel());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        gin->data[s] = in.data[s] > 0.0 ? gout.data[s] : 0.0;
    }
}

Tensor maxpool2(const Tensor& in) {
    expect_rank(in, 4, "maxpool2 input");
    const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2: spatial dims must be even");
    const int oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* ibase =
                &in.data[(static_cast<std::size_t>(ni) * c + ci) * static_cast<std::size_t>(h) * w];
            double* obase = &out.data[(static_cast<std::size_t>(ni) * c + ci) *
                                      static_cast<std::size_t>(oh) * ow];
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double best = ibase[static_cast<std::size_t>(2 * y) * w + 2 * x];
                    for (int k = 1; k < 4; ++k) {
                        const int sy = 2 * y + k / 2;
                        const int sx = 2 * x + k % 2;
                        const double v = ibase[static_cast<std::size_t>(sy) * w + sx];
                        if (v > best) best = v;
                    }
                    obase[static_cast<std::size_t>(y) * ow + x] = best;
                }
            }
        }
    }
    return out;
}

void maxpool2_backward(const Tensor& in, const Tensor& gout, Tensor* gin) {
    const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    const int oh = h / 2, ow = w / 2;
    expect_shape(gout, {n, c, oh, ow}, "maxpool2_backward gout");
    *gin = Tensor(in.shape);
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* ibase =
                &in.data[(static_cast<std::size_t>(ni) * c + ci) * static_cast<std::size_t>(h) * w];
            const double* gbase = &gout.data[(static_cast<std::size_t>(ni) * c + ci) *
                                             static_cast<std::size_t>(oh) * ow];
            double* obase = &gin->data[(static_cast<std::size_t>(ni) * c + ci) *
                                       static_cast<std::size_t>(h) * w];
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    // Same first-wins argmax as the forward pass.
                    int arg = 0;
                    double best = ibase[static_cast<std::size_t>(2 * y) * w + 2 * x];
                    for (int k = 1; k < 4; ++k) {
                        const int sy = 2 * y + k / 2;
                        const int sx = 2 * x + k % 2;
                        const double v = ibase[static_cast<std::size_t>(sy) * w + sx];
                        if (v > best) {
                            best = v;
                            arg = k;
                        }
                    }
                    const int sy = 2 * y + arg / 2;
                    const int sx = 2 * x + arg % 2;
                    obase[static_cast<std::size_t>(sy) * w + sx] +=
                        gbase[static_cast<std::size_t>(y) * ow + x];
                }
            }
        }
    }
}

Tensor dense(const Tensor& in, const Tensor& w, const Tensor& b) {
    expect_rank(in, 2, "dense input");
    expect_rank(w, 2, "dense weights");
    const int n = in.dim(0), d = in.dim(1);
    const int u = w.dim(0);
    if (w.dim(1) != d) throw ShapeError("dense: weight columns must match input features");
    expect_shape(b, {u}, "dense bias");
    Tensor out({n, u});
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ui = 0; ui < u; ++ui) {
            const double* irow = &in.data[static_cast<std::size_t>(ni) * d];
            const double* wrow = &w.data[static_cast<std::size_t>(ui) * d];
            double acc = b.data[static_cast<std::size_t>(ui)];
            for (int k = 0; k < d; ++k) acc += wrow[k] * irow[k];
            out.data[static_cast<std::size_t>(ni) * u + ui] = acc;
        }
    }
    return out;
}

void dense_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin, Tensor* gw,
                    Tensor* gb) {
    const int n = in.dim(0), d = in.dim(1);
    const int u = w.dim(0);
    expect_shape(gout, {n, u}, "dense_backward gout");
    if (gin) {
        *gin = Tensor({n, d});
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni) {
            const double* grow = &gout.data[static_cast<std::size_t>(ni) * u];
            double* orow = &gin->data[static_cast<std::size_t>(ni) * d];
            for (int ui = 0; ui < u; ++ui) {
                const double g = grow[ui];
                const double* wrow = &w.data[static_cast<std::size_t>(ui) * d];
                for (int k = 0; k < d; ++k) orow[k] += g * wrow[k];
            }
        }
    }
    if (gw) {
        *gw = Tensor({u, d});
#pragma omp parallel for schedule(static)
        for (int ui = 0; ui < u; ++ui) {
            double* wrow = &gw->data[static_cast<std::size_t>(ui) * d];
            for (int ni = 0; ni < n; ++ni) {
                const double g = gout.data[static_cast<std::size_t>(ni) * u + ui];
                const double* irow = &in.data[static_cast<std::size_t>(ni) * d];
                for (int k = 0; k < d; ++k) wrow[k] += g * irow[k];
            }
        }
    }
    if (gb) {
        *gb = Tensor({u});
#pragma omp parallel for schedule(static)
        for (int ui = 0; ui < u; ++ui) {
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni)
                acc += gout.data[static_cast<std::size_t>(ni) * u + ui];
            gb->data[static_cast<std::size_t>(ui)] = acc;
        }
    }
}

Tensor softmax_rows(const Tensor& logits) {
    expect_rank(logits, 2, "softmax input");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out({n, k});
#pragma omp parallel for schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        const double* row = &logits.data[static_cast<std::size_t>(ni) * k];
        double* orow = &out.data[static_cast<std::size_t>(ni) * k];
        double mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            orow[i] = std::exp(row[i] - mx);
            sum += orow[i];
        }
        for (int i = 0; i < k; ++i) orow[i] /= sum;
    }
    return out;
}

Tensor dropout(const Tensor& in, double p, Rng& rng, Tensor* mask) {
    if (p < 0.0 || p >= 1.0) throw ParamError("dropout: p must lie in [0,1)");
    Tensor out(in.shape);
    if (mask) *mask = Tensor(in.shape);
    const double scale = 1.0 / (1.0 - p);
    // Mask draws are sequential by index: the rng is the only source of
    // stochasticity, so this loop stays serial.
    for (std::size_t i = 0; i < in.numel(); ++i) {
        const double m = rng.next_double() >= p ? scale : 0.0;
        out.data[i] = in.data[i] * m;
        if (mask) mask->data[i] = m;
    }
    return out;
}

} // namespace layers

std::vector<Tensor*> ConvNet::params() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::vector<const Tensor*> ConvNet::params() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

namespace {

void check_config(const NetConfig& cfg) {
    if (cfg.input_size < 4 || cfg.input_size % 4 != 0)
        throw ParamError("net config: input_size must be a positive multiple of 4");
    if (cfg.conv1_channels < 1 || cfg.conv2_channels < 1 || cfg.dense_units < 1 ||
        cfg.num_classes < 2)
        throw ParamError("net config: channels/units must be >= 1 and classes >= 2");
    if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0)
        throw ParamError("net config: dropout_p must lie in [0,1)");
}

int flat_features(const NetConfig& cfg) {
    const int q = cfg.input_size / 4;
    return cfg.conv2_channels * q * q;
}

void fill_he(Tensor& t, int fan_in, Rng& rng) {
    const double scale = std::sqrt(2.0 / fan_in);
    for (double& v : t.data) v = rng.next_gaussian() * scale;
}

struct ForwardCache {
    Tensor c1, r1, p1; // conv1 out, relu, pool
    Tensor c2, r2, p2;
    Tensor flat;       // [n, F] reshaped view of p2
    Tensor mask;       // dropout mask, empty when inactive
    Tensor drop;       // [n, F] after dropout
    Tensor f1, a1;     // fc1 pre-activation / post-ReLU
    Tensor logits;
};

Tensor reshape(const Tensor& t, std::vector<int> shape) {
    Tensor out(std::move(shape));
    if (out.numel() != t.numel()) throw ShapeError("reshape: element count mismatch");
    out.data = t.data;
    return out;
}

ForwardCache run_forward(const ConvNet& net, const Tensor& batch, bool train_mode, Rng* rng) {
    const NetConfig& cfg = net.cfg;
    expect_rank(batch, 4, "forward batch");
    if (batch.dim(1) != 1 || batch.dim(2) != cfg.input_size || batch.dim(3) != cfg.input_size)
        throw ShapeError("forward: batch must be [n,1,S,S] with S = input_size");
    const int n = batch.dim(0);

    ForwardCache c;
    c.c1 = layers::conv2d(batch, net.conv1_w, net.conv1_b);
    c.r1 = layers::relu(c.c1);
    c.p1 = layers::maxpool2(c.r1);
    c.c2 = layers::conv2d(c.p1, net.conv2_w, net.conv2_b);
    c.r2 = layers::relu(c.c2);
    c.p2 = layers::maxpool2(c.r2);
    c.flat = reshape(c.p2, {n, flat_features(cfg)});

    if (train_mode && cfg.dropout_p > 0.0) {
        if (!rng) throw ParamError("forward: train_mode dropout needs an rng");
        c.drop = layers::dropout(c.flat, cfg.dropout_p, *rng, &c.mask);
    } else {
        c.drop = c.flat;
    }
    c.f1 = layers::dense(c.drop, net.fc1_w, net.fc1_b);
    c.a1 = layers::relu(c.f1);
    c.logits = layers::dense(c.a1, net.fc2_w, net.fc2_b);
    for (double v : c.logits.data)
        if (!std::isfinite(v)) throw NumericError("forward produced non-finite logits");
    return c;
}

// Gradient w.r.t. the flattened post-pool features, given dlogits.
// Shared by training backprop and the Grad-CAM pass.
void head_backward(const ConvNet& net, const ForwardCache& c, const Tensor& dlogits,
                   Tensor* dflat, Tensor* gfc1_w, Tensor* gfc1_b, Tensor* gfc2_w, Tensor* gfc2_b) {
    Tensor da1, df1, ddrop;
    layers::dense_backward(c.a1, net.fc2_w, dlogits, &da1, gfc2_w, gfc2_b);
    layers::relu_backward(c.f1, da1, &df1);
    layers::dense_backward(c.drop, net.fc1_w, df1, &ddrop, gfc1_w, gfc1_b);
    if (c.mask.numel() > 0) {
        *dflat = Tensor(ddrop.shape);
        for (std::size_t i = 0; i < ddrop.numel(); ++i)
            dflat->data[i] = ddrop.data[i] * c.mask.data[i];
    } else {
        *dflat = std::move(ddrop);
    }
}

} // namespace

ConvNet init_net(const NetConfig& cfg, std::uint64_t seed) {
    check_config(cfg);
    ConvNet net;
    net.cfg = cfg;
    net.conv1_w = Tensor({cfg.conv1_channels, 1, 3, 3});
    net.conv1_b = Tensor({cfg.conv1_channels});
    net.conv2_w = Tensor({cfg.conv2_channels, cfg.conv1_channels, 3, 3});
    net.conv2_b = Tensor({cfg.conv2_channels});
    net.fc1_w = Tensor({cfg.dense_units, flat_features(cfg)});
    net.fc1_b = Tensor({cfg.dense_units});
    net.fc2_w = Tensor({cfg.num_classes, cfg.dense_units});
    net.fc2_b = Tensor({cfg.num_classes});

    Rng rng(seed);
    fill_he(net.conv1_w, 1 * 9, rng);
    fill_he(net.conv2_w, cfg.conv1_channels * 9, rng);
    fill_he(net.fc1_w, flat_features(cfg), rng);
    fill_he(net.fc2_w, cfg.dense_units, rng);
    return net;
}

Tensor forward(const ConvNet& net, const Tensor& batch, bool train_mode, Rng* rng) {
    return layers::softmax_rows(run_forward(net, batch, train_mode, rng).logits);
}

Tensor forward_logits(const ConvNet& net, const Tensor& batch, bool train_mode, Rng* rng) {
    return run_forward(net, batch, train_mode, rng).logits;
}

LossGrads loss_and_grads(const ConvNet& net, const Tensor& batch, const std::vector<int>& labels,
                         const std::vector<double>& class_weights, bool train_mode, Rng* rng) {
    const int n = batch.dim(0);
    const int k = net.cfg.num_classes;
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("loss_and_grads: labels must match batch size");
    for (int lab : labels)
        if (lab < 0 || lab >= k) throw ParamError("loss_and_grads: label out of range");
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != k)
        throw ShapeError("loss_and_grads: class_weights must have num_classes entries");

    ForwardCache c = run_forward(net, batch, train_mode, rng);
    const Tensor probs = layers::softmax_rows(c.logits);

    double wsum = 0.0;
    double loss = 0.0;
    Tensor dlogits({n, k});
    for (int i = 0; i < n; ++i) {
        const double w = class_weights.empty()
                             ? 1.0
                             : class_weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        wsum += w;
        const double p = probs.data[static_cast<std::size_t>(i) * k +
                                    labels[static_cast<std::size_t>(i)]];
        loss -= w * std::log(std::max(p, 1e-12));
    }
    if (wsum <= 0.0) throw ParamError("loss_and_grads: total class weight is zero");
    loss /= wsum;
    for (int i = 0; i < n; ++i) {
        const double w = class_weights.empty()
                             ? 1.0
                             : class_weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        for (int j = 0; j < k; ++j) {
            const double onehot = j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            dlogits.data[static_cast<std::size_t>(i) * k + j] =
                w / wsum * (probs.data[static_cast<std::size_t>(i) * k + j] - onehot);
        }
    }

    LossGrads out;
    out.loss = loss;
    out.weight_sum = wsum;
    out.grads.resize(8);

    Tensor dflat;
    head_backward(net, c, dlogits, &dflat, &out.grads[4], &out.grads[5], &out.grads[6],
                  &out.grads[7]);

    Tensor dp2 = reshape(dflat, c.p2.shape);
    Tensor dr2, dc2, dp1, dr1, dc1;
    layers::maxpool2_backward(c.r2, dp2, &dr2);
    layers::relu_backward(c.c2, dr2, &dc2);
    layers::conv2d_backward(c.p1, net.conv2_w, dc2, &dp1, &out.grads[2], &out.grads[3]);
    layers::maxpool2_backward(c.r1, dp1, &dr1);
    layers::relu_backward(c.c1, dr1, &dc1);
    layers::conv2d_backward(batch, net.conv1_w, dc1, nullptr, &out.grads[0], &out.grads[1]);
    return out;
}

Tensor make_batch(const std::vector<GrayImage>& images, int input_size) {
    if (images.empty()) throw ShapeError("make_batch: no images");
    const int n = static_cast<int>(images.size());
    Tensor batch({n, 1, input_size, input_size});
    const std::size_t px = static_cast<std::size_t>(input_size) * input_size;
    for (int i = 0; i < n; ++i) {
        const GrayImage& img = images[static_cast<std::size_t>(i)];
        if (img.width != input_size || img.height != input_size)
            throw ShapeError("make_batch: image size does not match input_size");
        std::copy(img.pixels.begin(), img.pixels.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(px * static_cast<std::size_t>(i)));
    }
    return batch;
}

TrainResult train(ConvNet& net, const TrainSet& data, const TrainParams& tp) {
    if (data.images.empty()) throw ValidationError("train: empty training set");
    if (data.images.size() != data.labels.size())
        throw ShapeError("train: images and labels sizes differ");
    if (tp.epochs < 1 || tp.batch_size < 1) throw ParamError("train: epochs and batch_size >= 1");
    const int n = static_cast<int>(data.images.size());

    const bool augment_active = tp.augment.max_rotation_deg > 0.0 || tp.augment.hflip_prob > 0.0;
    Rng dropout_rng(mix_seed(tp.seed, 1));
    const std::uint64_t aug_base = mix_seed(tp.seed, 2);

    TrainResult result;
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < tp.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(tp.seed, 10 + 2 * static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        const std::uint64_t aug_epoch = mix_seed(aug_base, static_cast<std::uint64_t>(epoch));

        double loss_sum = 0.0; // weighted by per-batch weight mass
        double weight_sum = 0.0;
        for (int start = 0; start < n; start += tp.batch_size) {
            const int stop = std::min(n, start + tp.batch_size);
            std::vector<GrayImage> imgs;
            std::vector<int> labels;
            imgs.reserve(static_cast<std::size_t>(stop - start));
            for (int i = start; i < stop; ++i) {
                const int idx = order[static_cast<std::size_t>(i)];
                const GrayImage& src = data.images[static_cast<std::size_t>(idx)];
                if (augment_active) {
                    imgs.push_back(imgproc::random_augment(
                        src, tp.augment.max_rotation_deg, tp.augment.hflip_prob,
                        mix_seed(aug_epoch, static_cast<std::uint64_t>(idx))));
                } else {
                    imgs.push_back(src);
                }
                labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
            }
            const Tensor batch = make_batch(imgs, net.cfg.input_size);
            LossGrads lg;
            try {
                lg = loss_and_grads(net, batch, labels, tp.class_weights, true, &dropout_rng);
            } catch (const NumericError& e) {
                // Non-finite activations surface here; add the epoch context.
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                                   e.what());
            }
            if (!std::isfinite(lg.loss))
                throw NumericError("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch));
            auto params = net.params();
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& t = *params[p];
                const Tensor& g = lg.grads[p];
                for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] -= tp.lr * g.data[i];
            }
            loss_sum += lg.loss * lg.weight_sum;
            weight_sum += lg.weight_sum;
        }
        result.loss_history.push_back(loss_sum / weight_sum);
    }
    return result;
}

std::vector<int> predict_classes(const ConvNet& net, const Tensor& batch) {
    const Tensor probs = forward(net, batch, false);
    const int n = probs.dim(0), k = probs.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        double best = probs.data[static_cast<std::size_t>(i) * k];
        for (int j = 1; j < k; ++j) {
            const double v = probs.data[static_cast<std::size_t>(i) * k + j];
            if (v > best) {
                best = v;
                arg = j;
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

GradCamMap gradcam(const ConvNet& net, const Tensor& img, int class_index) {
    if (img.shape.size() != 4 || img.dim(0) != 1)
        throw ShapeError("gradcam: expects a single-sample [1,1,S,S] tensor");
    if (class_index < 0 || class_index >= net.cfg.num_classes)
        throw ParamError("gradcam: class_index out of range");

    ForwardCache c = run_forward(net, img, false, nullptr);

    Tensor dlogits({1, net.cfg.num_classes});
    dlogits.data[static_cast<std::size_t>(class_index)] = 1.0;

    Tensor dflat;
    head_backward(net, c, dlogits, &dflat, nullptr, nullptr, nullptr, nullptr);
    Tensor dp2 = reshape(dflat, c.p2.shape);
    Tensor dA;
    layers::maxpool2_backward(c.r2, dp2, &dA); // gradient at the post-ReLU conv2 map

    const int ch = c.r2.dim(1), h = c.r2.dim(2), w = c.r2.dim(3);
    const std::size_t cs = static_cast<std::size_t>(h) * w;
    GradCamMap map;
    map.width = w;
    map.height = h;
    map.values.assign(cs, 0.0);
    for (int k = 0; k < ch; ++k) {
        double alpha = 0.0;
        for (std::size_t i = 0; i < cs; ++i)
            alpha += dA.data[static_cast<std::size_t>(k) * cs + i];
        alpha /= static_cast<double>(cs);
        for (std::size_t i = 0; i < cs; ++i)
            map.values[i] += alpha * c.r2.data[static_cast<std::size_t>(k) * cs + i];
    }
    double mx = 0.0;
    for (double& v : map.values) {
        v = v > 0.0 ? v : 0.0;
        mx = std::max(mx, v);
    }
    if (mx > 0.0)
        for (double& v : map.values) v /= mx;
    return map;
}

GrayImage upsample_heatmap(const GradCamMap& map, int w, int h) {
    if (w < map.width || h < map.height)
        throw ParamError("upsample_heatmap: target must be at least the map size");
    GrayImage img(map.width, map.height);
    img.pixels = map.values;
    if (w == map.width && h == map.height) return img;
    return imgproc::resize(img, w, h, imgproc::ResizeMethod::Bilinear);
}

void save_checkpoint(const ConvNet& net, const std::filesystem::path& bin_path,
                     const std::filesystem::path& manifest_path) {
    nlohmann::json manifest;
    manifest["config"] = {{"input_size", net.cfg.input_size},
                          {"conv1_channels", net.cfg.conv1_channels},
                          {"conv2_channels", net.cfg.conv2_channels},
                          {"dense_units", net.cfg.dense_units},
                          {"num_classes", net.cfg.num_classes},
                          {"dropout_p", net.cfg.dropout_p}};
    static const char* kNames[] = {"conv1_w", "conv1_b", "conv2_w", "conv2_b",
                                   "fc1_w",   "fc1_b",   "fc2_w",   "fc2_b"};
    manifest["tensors"] = nlohmann::json::array();
    const auto params = net.params();
    std::vector<unsigned char> bytes;
    for (std::size_t p = 0; p < params.size(); ++p) {
        manifest["tensors"].push_back({{"name", kNames[p]}, {"shape", params[p]->shape}});
        for (double v : params[p]->data) {
            const auto u = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i)
                bytes.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xFF));
        }
    }
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot write checkpoint manifest: " + manifest_path.string());
    mf << manifest.dump(2) << '\n';
    std::ofstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot write checkpoint: " + bin_path.string());
    bf.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!bf) throw IoError("short write to checkpoint: " + bin_path.string());
}

ConvNet load_checkpoint(const std::filesystem::path& bin_path,
                        const std::filesystem::path& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot read checkpoint manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }

    NetConfig cfg;
    const auto& jc = manifest.at("config");
    cfg.input_size = jc.at("input_size").get<int>();
    cfg.conv1_channels = jc.at("conv1_channels").get<int>();
    cfg.conv2_channels = jc.at("conv2_channels").get<int>();
    cfg.dense_units = jc.at("dense_units").get<int>();
    cfg.num_classes = jc.at("num_classes").get<int>();
    cfg.dropout_p = jc.at("dropout_p").get<double>();

    ConvNet net = init_net(cfg, 0);
    const auto params = net.params();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != params.size())
        throw FormatError("checkpoint manifest lists wrong tensor count");
    std::size_t total = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto shape = tensors[p].at("shape").get<std::vector<int>>();
        if (shape != params[p]->shape)
            throw FormatError("checkpoint tensor shape mismatch for " +
                              tensors[p].at("name").get<std::string>());
        total += params[p]->numel();
    }

    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot read checkpoint: " + bin_path.string());
    std::vector<unsigned char> bytes(total * 8);
    bf.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (bf.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError("checkpoint file shorter than manifest demands");
    char extra;
    if (bf.read(&extra, 1); bf.gcount() != 0)
        throw FormatError("checkpoint file longer than manifest demands");

    std::size_t off = 0;
    for (Tensor* t : params) {
        for (double& v : t->data) {
            std::uint64_t u = 0;
            for (int i = 0; i < 8; ++i)
                u |= static_cast<std::uint64_t>(bytes[off + static_cast<std::size_t>(i)]) << (8 * i);
            v = std::bit_cast<double>(u);
            off += 8;
        }
    }
    return net;
}

} // namespace biasaudit::nn
