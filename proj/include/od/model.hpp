#pragma once

// The classifier f(.; theta) with a final linear layer of per-class rows w_j,
// its cross-entropy objective, the softmax confidence head, and deterministic
// SGD-with-momentum training with step decay and horizontal-flip augmentation.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "od/autodiff.hpp"
#include "od/data.hpp"
#include "od/errors.hpp"
#include "od/graph.hpp"
#include "od/io.hpp"
#include "od/rng.hpp"
#include "od/tensor.hpp"

namespace od {

enum class ArchKind { Mlp, TinyConv };

inline const char* arch_kind_name(ArchKind k) {
    return k == ArchKind::Mlp ? "mlp" : "tiny-conv";
}

inline ArchKind parse_arch_kind(const std::string& s) {
    if (s == "mlp") return ArchKind::Mlp;
    if (s == "tiny-conv") return ArchKind::TinyConv;
    throw ConfigError("unknown architecture kind: " + s);
}

struct Architecture {
    ArchKind kind = ArchKind::Mlp;
    int height = 8;
    int width = 8;
    int channels = 1;
    // mlp: dense widths before the feature layer (may be empty);
    // tiny-conv: [0] = 3x3 conv channel count, the rest dense widths
    std::vector<int> hidden_widths = {16};
    int feature_dim = 16; // D, penultimate width
    int num_classes = 2;  // m

    int64_t input_dim() const { return int64_t(height) * width * channels; }

    void validate() const {
        if (num_classes < 2) throw ConfigError("architecture: num_classes must be >= 2");
        if (feature_dim < num_classes)
            throw ConfigError("architecture: feature_dim must be >= num_classes");
        if (height < 1 || width < 1 || channels < 1)
            throw ConfigError("architecture: degenerate input shape");
        for (int w : hidden_widths)
            if (w < 1) throw ConfigError("architecture: hidden widths must be positive");
        if (kind == ArchKind::TinyConv) {
            if (hidden_widths.empty())
                throw ConfigError("architecture: tiny-conv needs hidden_widths[0] = conv channels");
            if (height % 2 != 0 || width % 2 != 0)
                throw ConfigError("architecture: tiny-conv needs even height and width");
        }
    }

    bool operator==(const Architecture&) const = default;
};

// Layer tensors in declaration order: alternating weight {in, out} and bias
// {out} through the feature layer, then the classifier weight {m, D} (rows
// w_j) and classifier bias {m}. tiny-conv's first pair is the 3x3 conv kernel
// {9C, K} and its bias {K}.
struct LayerPlan {
    std::vector<Shape> shapes;
    std::vector<int64_t> fan_in; // 0 for biases (zero-initialized)
};

inline LayerPlan layer_plan(const Architecture& arch) {
    arch.validate();
    LayerPlan plan;
    auto dense = [&](int64_t in, int64_t out) {
        plan.shapes.push_back({in, out});
        plan.fan_in.push_back(in);
        plan.shapes.push_back({out});
        plan.fan_in.push_back(0);
    };
    int64_t flat = 0;
    size_t dense_from = 0;
    if (arch.kind == ArchKind::Mlp) {
        flat = arch.input_dim();
    } else {
        int64_t k = arch.hidden_widths[0];
        plan.shapes.push_back({9 * arch.channels, k});
        plan.fan_in.push_back(9 * arch.channels);
        plan.shapes.push_back({k});
        plan.fan_in.push_back(0);
        flat = int64_t(arch.height / 2) * (arch.width / 2) * k;
        dense_from = 1;
    }
    int64_t in = flat;
    for (size_t i = dense_from; i < arch.hidden_widths.size(); ++i) {
        dense(in, arch.hidden_widths[i]);
        in = arch.hidden_widths[i];
    }
    dense(in, arch.feature_dim);
    plan.shapes.push_back({arch.num_classes, arch.feature_dim});
    plan.fan_in.push_back(arch.feature_dim);
    plan.shapes.push_back({arch.num_classes});
    plan.fan_in.push_back(0);
    return plan;
}

template <class S>
struct ModelParamsT {
    Architecture arch;
    std::vector<TensorT<S>> layers;
    std::vector<TensorT<S>> momentum;

    template <class T>
    ModelParamsT<T> cast() const {
        ModelParamsT<T> out;
        out.arch = arch;
        for (const auto& t : layers) out.layers.push_back(t.template cast<T>());
        for (const auto& t : momentum) out.momentum.push_back(t.template cast<T>());
        return out;
    }
};

using ModelParams = ModelParamsT<float>;

// He-style init: weights i.i.d. zero-mean with variance 2/fan_in, biases and
// momentum buffers zero. Each layer draws from its own derived seed stream.
template <class S>
ModelParamsT<S> init_params_t(const Architecture& arch, uint64_t seed) {
    LayerPlan plan = layer_plan(arch);
    ModelParamsT<S> params;
    params.arch = arch;
    for (size_t l = 0; l < plan.shapes.size(); ++l) {
        TensorT<S> t(plan.shapes[l], S(0));
        if (plan.fan_in[l] > 0) {
            Rng rng(derive_seed(seed, "init", uint64_t(l)));
            double sd = std::sqrt(2.0 / double(plan.fan_in[l]));
            for (auto& v : t.data) v = S(sd * rng.normal());
        }
        params.layers.push_back(std::move(t));
        params.momentum.emplace_back(plan.shapes[l], S(0));
    }
    return params;
}

inline ModelParams init_params(const Architecture& arch, uint64_t seed) {
    return init_params_t<float>(arch, seed);
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

namespace modelgraph {

template <class S>
struct ForwardT {
    std::vector<ad::NodeId> params; // one node per layer tensor, declaration order
    ad::NodeId input = ad::kNoNode;    // {B, H, W, C}
    ad::NodeId features = ad::kNoNode; // {B, D}
    ad::NodeId logits = ad::kNoNode;   // {B, m}
};

// Builds the forward pass over the given parameter nodes; when `params` is
// empty, fresh variables are created (one per layer tensor). Passing existing
// nodes lets the distillation meta-graph route updated-parameter expressions
// through the same forward definition; `input` likewise substitutes an
// existing {batch, H, W, C} node (e.g. the distilled-image variable) for the
// otherwise fresh input variable.
template <class S>
ForwardT<S> build_forward(ad::GraphT<S>& g, const Architecture& arch, int64_t batch,
                          std::span<const ad::NodeId> params = {},
                          ad::NodeId input = ad::kNoNode) {
    LayerPlan plan = layer_plan(arch);
    ForwardT<S> f;
    if (params.empty()) {
        for (size_t l = 0; l < plan.shapes.size(); ++l)
            f.params.push_back(g.var(plan.shapes[l], "layer" + std::to_string(l)));
    } else {
        if (params.size() != plan.shapes.size())
            throw ShapeError("build_forward: expected " + std::to_string(plan.shapes.size()) +
                             " parameter nodes, got " + std::to_string(params.size()));
        f.params.assign(params.begin(), params.end());
    }
    const Shape in_shape{batch, arch.height, arch.width, arch.channels};
    if (input == ad::kNoNode) {
        f.input = g.var(in_shape, "input");
    } else {
        if (g.node(input).shape != in_shape)
            throw ShapeError("build_forward: input node shape " +
                             shape_str(g.node(input).shape) + " vs expected " +
                             shape_str(in_shape));
        f.input = input;
    }

    size_t l = 0;
    auto dense = [&](ad::NodeId h, int64_t rows, bool with_relu) {
        ad::NodeId w = f.params[l++];
        ad::NodeId b = f.params[l++];
        ad::NodeId z = g.add(g.matmul(h, w), g.rep_rows(b, rows));
        return with_relu ? g.relu(z) : z;
    };

    ad::NodeId h;
    if (arch.kind == ArchKind::Mlp) {
        h = g.reshape(f.input, {batch, arch.input_dim()});
    } else {
        ad::NodeId cols = g.im2col(f.input, 3, 1, 1); // {B*H*W, 9C}
        int64_t rows = batch * arch.height * arch.width;
        ad::NodeId act = dense(cols, rows, true);
        int64_t k = arch.hidden_widths[0];
        ad::NodeId img = g.reshape(act, {batch, arch.height, arch.width, k});
        ad::NodeId pooled = g.avgpool2(img);
        h = g.reshape(pooled, {batch, int64_t(arch.height / 2) * (arch.width / 2) * k});
    }
    size_t dense_from = arch.kind == ArchKind::TinyConv ? 1 : 0;
    for (size_t i = dense_from; i < arch.hidden_widths.size(); ++i) h = dense(h, batch, true);
    f.features = dense(h, batch, true); // feature layer, post-relu
    ad::NodeId wc = f.params[l++];
    ad::NodeId bc = f.params[l++];
    f.logits = g.add(g.matmul(f.features, wc, false, true), g.rep_rows(bc, batch));
    return f;
}

} // namespace modelgraph

// Assembles a {B, H, W, C} batch tensor from per-image {H, W, C} tensors.
template <class S>
TensorT<S> stack_batch(const std::vector<Tensor>& images, std::span<const size_t> idx) {
    if (idx.empty()) throw Error("stack_batch: empty selection");
    const Shape& one = images.at(idx[0]).shape;
    Shape shape{int64_t(idx.size())};
    shape.insert(shape.end(), one.begin(), one.end());
    TensorT<S> out(shape);
    size_t per = images[idx[0]].data.size();
    for (size_t i = 0; i < idx.size(); ++i) {
        const Tensor& img = images.at(idx[i]);
        if (img.shape != one) throw ShapeError("stack_batch: non-uniform image shapes");
        for (size_t p = 0; p < per; ++p) out.data[i * per + p] = S(img.data[p]);
    }
    return out;
}

namespace detail {

// Accepts {B, H, W, C} or flattened {B, input_dim} and returns {B, H, W, C}.
template <class S>
TensorT<S> to_batch4(const Architecture& arch, const TensorT<S>& x) {
    if (x.rank() == 4 && x.shape[1] == arch.height && x.shape[2] == arch.width &&
        x.shape[3] == arch.channels)
        return x;
    if (x.rank() == 2 && x.shape[1] == arch.input_dim()) {
        TensorT<S> y = x;
        y.shape = {x.shape[0], arch.height, arch.width, arch.channels};
        return y;
    }
    throw ShapeError("batch shape " + shape_str(x.shape) + " does not match architecture input");
}

template <class S>
void bind_params(ad::BindingsT<S>& b, const modelgraph::ForwardT<S>& f,
                 const ModelParamsT<S>& params) {
    for (size_t l = 0; l < f.params.size(); ++l) b.bind(f.params[l], params.layers[l]);
}

} // namespace detail

// Penultimate-layer activations f(x; theta), shape {B, D}.
template <class S>
TensorT<S> forward_features(const ModelParamsT<S>& params, const TensorT<S>& x) {
    TensorT<S> batch = detail::to_batch4(params.arch, x);
    ad::GraphT<S> g;
    auto f = modelgraph::build_forward<S>(g, params.arch, batch.shape[0]);
    ad::BindingsT<S> b;
    detail::bind_params(b, f, params);
    b.bind(f.input, batch);
    return ad::eval(g, f.features, b);
}

// Softmax class confidences, shape {B, m}; rows sum to 1.
template <class S>
TensorT<S> class_confidence(const ModelParamsT<S>& params, const TensorT<S>& x) {
    TensorT<S> batch = detail::to_batch4(params.arch, x);
    ad::GraphT<S> g;
    auto f = modelgraph::build_forward<S>(g, params.arch, batch.shape[0]);
    ad::NodeId conf = g.softmax(f.logits);
    ad::BindingsT<S> b;
    detail::bind_params(b, f, params);
    b.bind(f.input, batch);
    return ad::eval(g, conf, b);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.001;
    double momentum = 0.9;
    int epochs = 25;
    int batch_size = 32;
    double lr_decay = 0.1; // multiplied in every decay_every epochs
    int decay_every = 10;
    double flip_prob = 0.5;
    uint64_t seed = 1;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (lr_decay <= 0) throw ConfigError("train: lr_decay must be > 0");
        if (decay_every < 1) throw ConfigError("train: decay_every must be >= 1");
        if (flip_prob < 0 || flip_prob > 1) throw ConfigError("train: flip_prob must be in [0, 1]");
    }
};

// Step-decay schedule, epoch 0-based: lr(e) = learning_rate * decay^(e/decay_every).
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, double(epoch / cfg.decay_every));
}

// buffer <- momentum * buffer + grad; param <- param - lr * buffer
template <class S>
void sgd_momentum_step(ModelParamsT<S>& params, const std::vector<TensorT<S>>& grads, double lr,
                       double momentum) {
    if (grads.size() != params.layers.size())
        throw ShapeError("sgd step: " + std::to_string(grads.size()) + " grads for " +
                         std::to_string(params.layers.size()) + " layers");
    for (size_t l = 0; l < grads.size(); ++l) {
        if (grads[l].shape != params.layers[l].shape)
            throw ShapeError("sgd step: grad shape " + shape_str(grads[l].shape) +
                             " vs param shape " + shape_str(params.layers[l].shape));
        auto& buf = params.momentum[l];
        auto& p = params.layers[l];
        for (size_t i = 0; i < p.data.size(); ++i) {
            buf.data[i] = S(momentum) * buf.data[i] + grads[l].data[i];
            p.data[i] -= S(lr) * buf.data[i];
        }
    }
}

// With probability prob, reverse the column order of an {H, W, C} image.
template <class S>
TensorT<S> augment_flip(const TensorT<S>& img, double prob, Rng& rng) {
    if (img.rank() != 3) throw ShapeError("augment_flip needs {H, W, C}, got " + shape_str(img.shape));
    if (!rng.bernoulli(prob)) return img;
    TensorT<S> out(img.shape);
    const int64_t H = img.shape[0], W = img.shape[1], C = img.shape[2];
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c)
            for (int64_t ch = 0; ch < C; ++ch)
                out.data[size_t((r * W + c) * C + ch)] =
                    img.data[size_t((r * W + (W - 1 - c)) * C + ch)];
    return out;
}

namespace detail {

// One compiled training step for a fixed batch size: loss value plus the
// gradient of the mean cross-entropy w.r.t. every layer tensor.
template <class S>
struct CompiledStep {
    ad::GraphT<S> g;
    modelgraph::ForwardT<S> fwd;
    ad::NodeId labels = ad::kNoNode;
    ad::NodeId loss = ad::kNoNode;
    std::vector<ad::NodeId> grads;
    std::unique_ptr<ad::Evaluator<S>> ev;

    CompiledStep(const Architecture& arch, int64_t batch) {
        fwd = modelgraph::build_forward<S>(g, arch, batch);
        labels = g.var({batch}, "labels");
        loss = g.mean_all(g.softmax_xent(fwd.logits, labels));
        grads = g.gradient(loss, std::span<const ad::NodeId>(fwd.params));
        ev = std::make_unique<ad::Evaluator<S>>(g);
        std::vector<ad::NodeId> outs{loss};
        outs.insert(outs.end(), grads.begin(), grads.end());
        ev->prepare(std::span<const ad::NodeId>(outs));
    }
};

} // namespace detail

// Mini-batch SGD with momentum, seeded per-epoch shuffling, horizontal-flip
// augmentation, and step decay. Mutates `params`; returns per-epoch mean
// training loss (exactly cfg.epochs entries). Bit-deterministic per seed.
// Optionally reports wall-clock seconds per epoch (monotonic clock) and calls
// `on_epoch(epoch, params)` after each epoch's updates; the clock for an
// epoch stops before its callback runs, so observers do not distort timings.
template <class S>
std::vector<double> train_classifier(
    ModelParamsT<S>& params, const LabeledDataset& data, const TrainConfig& cfg,
    std::vector<double>* epoch_seconds = nullptr,
    const std::function<void(int, const ModelParamsT<S>&)>& on_epoch = {}) {
    cfg.validate();
    validate_dataset(data);
    if (data.m != params.arch.num_classes)
        throw Error("train: dataset has " + std::to_string(data.m) + " classes, model expects " +
                    std::to_string(params.arch.num_classes));
    const Shape want{params.arch.height, params.arch.width, params.arch.channels};
    if (data.images.front().shape != want)
        throw ShapeError("train: image shape " + shape_str(data.images.front().shape) +
                         " vs architecture input " + shape_str(want));

    const size_t n = data.size();
    std::map<int64_t, std::unique_ptr<detail::CompiledStep<S>>> compiled;
    std::vector<double> trace;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    if (epoch_seconds) epoch_seconds->clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(cfg, epoch);
        Rng order_rng(derive_seed(cfg.seed, "epoch-order", uint64_t(epoch)));
        order_rng.shuffle(order);
        Rng flip_rng(derive_seed(cfg.seed, "flip", uint64_t(epoch)));
        double loss_sum = 0.0;

        for (size_t start = 0; start < n; start += size_t(cfg.batch_size)) {
            const size_t b = std::min(size_t(cfg.batch_size), n - start);
            auto& step = compiled[int64_t(b)];
            if (!step)
                step = std::make_unique<detail::CompiledStep<S>>(params.arch, int64_t(b));

            Shape batch_shape{int64_t(b), want[0], want[1], want[2]};
            TensorT<S> batch(batch_shape);
            TensorT<S> labels({int64_t(b)});
            size_t per = size_t(shape_numel(want));
            for (size_t i = 0; i < b; ++i) {
                size_t src = order[start + i];
                TensorT<S> img = augment_flip(data.images[src].cast<S>(), cfg.flip_prob, flip_rng);
                std::copy(img.data.begin(), img.data.end(), batch.data.begin() + int64_t(i * per));
                labels.data[i] = S(data.labels[src]);
            }

            ad::BindingsT<S> bind;
            detail::bind_params(bind, step->fwd, params);
            bind.bind(step->fwd.input, batch);
            bind.bind(step->labels, labels);
            step->ev->run(bind);

            loss_sum += double(step->ev->value(step->loss).scalar()) * double(b);
            std::vector<TensorT<S>> grads;
            grads.reserve(step->grads.size());
            for (ad::NodeId gid : step->grads) grads.push_back(step->ev->value(gid));
            sgd_momentum_step(params, grads, lr, cfg.momentum);
        }
        trace.push_back(loss_sum / double(n));
        if (epoch_seconds) {
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
            epoch_seconds->push_back(dt.count());
        }
        if (on_epoch) on_epoch(epoch, params);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence (ODMP)
// ---------------------------------------------------------------------------

inline constexpr uint16_t kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointMagic = "ODMP";

inline void write_arch_descriptor(std::ostream& os, const Architecture& arch) {
    io::write_u8(os, arch.kind == ArchKind::Mlp ? 0 : 1);
    io::write_u16(os, uint16_t(arch.height));
    io::write_u16(os, uint16_t(arch.width));
    io::write_u8(os, uint8_t(arch.channels));
    io::write_u16(os, uint16_t(arch.hidden_widths.size()));
    for (int w : arch.hidden_widths) io::write_u16(os, uint16_t(w));
    io::write_u16(os, uint16_t(arch.feature_dim));
    io::write_u16(os, uint16_t(arch.num_classes));
}

inline Architecture read_arch_descriptor(std::istream& is) {
    Architecture arch;
    uint8_t kind = io::read_u8(is);
    if (kind > 1) throw CorruptHeaderError("checkpoint: unknown architecture kind");
    arch.kind = kind == 0 ? ArchKind::Mlp : ArchKind::TinyConv;
    arch.height = io::read_u16(is);
    arch.width = io::read_u16(is);
    arch.channels = io::read_u8(is);
    uint16_t nh = io::read_u16(is);
    arch.hidden_widths.clear();
    for (uint16_t i = 0; i < nh; ++i) arch.hidden_widths.push_back(io::read_u16(is));
    arch.feature_dim = io::read_u16(is);
    arch.num_classes = io::read_u16(is);
    arch.validate();
    return arch;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            uint64_t config_hash) {
    auto os = io::open_out(path);
    io::write_magic(os, kCheckpointMagic);
    io::write_u16(os, kCheckpointFormatVersion);
    io::write_u64(os, config_hash);
    write_arch_descriptor(os, params.arch);
    for (const auto& layer : params.layers)
        for (float v : layer.data) io::write_f32(os, v);
    if (!os) throw Error("write failed: " + path);
}

struct LoadedCheckpoint {
    ModelParams params;
    uint64_t config_hash = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kCheckpointMagic, "checkpoint");
    uint16_t ver = io::read_u16(is);
    if (ver != kCheckpointFormatVersion)
        throw CorruptHeaderError("checkpoint: unsupported version " + std::to_string(ver));
    LoadedCheckpoint out;
    out.config_hash = io::read_u64(is);
    out.params.arch = read_arch_descriptor(is);
    LayerPlan plan = layer_plan(out.params.arch);
    for (const Shape& shape : plan.shapes) {
        TensorT<float> t(shape);
        for (auto& v : t.data) v = io::read_f32(is);
        out.params.layers.push_back(std::move(t));
        out.params.momentum.emplace_back(shape, 0.0f);
    }
    io::expect_eof(is, "checkpoint");
    return out;
}

} // namespace od
