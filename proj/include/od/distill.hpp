#pragma once

// Dataset distillation: learn n synthetic images x_tilde (one per class) and
// a scalar inner step size eta so that ONE plain gradient step on x_tilde,
// taken from freshly sampled initial weights, minimizes the loss on real
// batches. The outer optimization differentiates through the inner step
// (gradient-of-gradient), with eta kept positive by a log parameterization
// applied outside the graph: the graph variable is eta itself, and the outer
// update is log_eta -= alpha * eta * dL/deta (chain rule).

#include <cmath>
#include <cstdint>
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
#include "od/model.hpp"
#include "od/rng.hpp"
#include "od/selection.hpp"
#include "od/tensor.hpp"

namespace od {

struct DistillConfig {
    int n = 0;              // distilled sample count; 0 means one per class
    double eta0 = 0.01;     // initial inner step size
    double alpha = 0.05;    // outer step size
    int batch = 32;         // M, real-batch size
    int iters = 200;        // T, outer iterations
    int weight_draws = 4;   // J, initial-weight samples per iteration
    int inner_steps = 1;    // S, unrolled inner steps
    int snapshot_every = 0; // K; 0 disables snapshots
    uint64_t seed = 1;

    int resolved_n(int m) const { return n == 0 ? m : n; }

    void validate(int m) const {
        if (resolved_n(m) < m)
            throw ConfigError("distill: n must be >= class count with one-per-class labels");
        if (eta0 <= 0) throw ConfigError("distill: eta0 must be > 0");
        if (alpha <= 0) throw ConfigError("distill: alpha must be > 0");
        if (batch < 1) throw ConfigError("distill: batch must be >= 1");
        if (iters < 0) throw ConfigError("distill: iters must be >= 0");
        if (weight_draws < 1) throw ConfigError("distill: weight_draws must be >= 1");
        if (inner_steps < 1) throw ConfigError("distill: inner_steps must be >= 1");
        if (snapshot_every < 0) throw ConfigError("distill: snapshot_every must be >= 0");
    }
};

struct DistilledSet {
    std::vector<Tensor> images; // n images {H, W, C}; values are free, not clamped
    std::vector<int> labels;    // fixed for the whole run, round-robin over classes
    double log_eta = 0.0;
    uint64_t config_hash = 0; // provenance
    uint32_t iteration = 0;   // provenance

    double eta() const { return std::exp(log_eta); }
    size_t size() const { return images.size(); }
};

// x_tilde entries i.i.d. N(0, 1) scaled to the pixel range [0, 1]: centered at
// 0.5 with standard deviation 0.25 (a quarter of the range).
inline DistilledSet init_distilled(const DistillConfig& cfg, const Architecture& arch) {
    arch.validate();
    cfg.validate(arch.num_classes);
    const int n = cfg.resolved_n(arch.num_classes);
    DistilledSet set;
    Rng rng(derive_seed(cfg.seed, "init-distilled"));
    for (int i = 0; i < n; ++i) {
        Tensor img({arch.height, arch.width, arch.channels});
        for (auto& v : img.data) v = float(0.5 + 0.25 * rng.normal());
        set.images.push_back(std::move(img));
        set.labels.push_back(i % arch.num_classes);
    }
    set.log_eta = std::log(cfg.eta0);
    return set;
}

// ---------------------------------------------------------------------------
// Packing helpers
// ---------------------------------------------------------------------------

inline Tensor pack_images(const std::vector<Tensor>& images) {
    Shape one = uniform_image_shape(images);
    Shape shape{int64_t(images.size())};
    shape.insert(shape.end(), one.begin(), one.end());
    Tensor out(shape);
    size_t per = images[0].data.size();
    for (size_t i = 0; i < images.size(); ++i)
        std::copy(images[i].data.begin(), images[i].data.end(), out.data.begin() + int64_t(i * per));
    return out;
}

inline std::vector<Tensor> unpack_images(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("unpack_images needs {n, H, W, C}");
    Shape one{x.shape[1], x.shape[2], x.shape[3]};
    size_t per = size_t(shape_numel(one));
    std::vector<Tensor> out;
    for (int64_t i = 0; i < x.shape[0]; ++i) {
        Tensor img(one);
        std::copy(x.data.begin() + i * int64_t(per), x.data.begin() + (i + 1) * int64_t(per),
                  img.data.begin());
        out.push_back(std::move(img));
    }
    return out;
}

inline LabeledDataset aux_to_dataset(const AuxiliaryDataset& aux) {
    LabeledDataset ds;
    ds.images = aux.images;
    ds.labels = aux.pseudo_labels;
    ds.m = aux.m;
    ds.name = "auxiliary";
    for (int k = 0; k < aux.m; ++k) ds.class_names.push_back("class" + std::to_string(k));
    return ds;
}

inline LabeledDataset distilled_to_dataset(const DistilledSet& set, int m) {
    LabeledDataset ds;
    ds.images = set.images;
    ds.labels = set.labels;
    ds.m = m;
    ds.name = "distilled";
    for (int k = 0; k < m; ++k) ds.class_names.push_back("class" + std::to_string(k));
    return ds;
}

// ---------------------------------------------------------------------------
// Meta graph: J inner-step replicas with shared x_tilde and eta
// ---------------------------------------------------------------------------

template <class S>
struct MetaGraphT {
    std::unique_ptr<ad::GraphT<S>> g;
    ad::NodeId x = ad::kNoNode;   // distilled variable
    ad::NodeId eta = ad::kNoNode; // scalar step-size variable
    std::vector<std::vector<ad::NodeId>> theta0; // [J][L] initial-weight variables
    ad::NodeId batch_x = ad::kNoNode, batch_y = ad::kNoNode;
    ad::NodeId outer_sum = ad::kNoNode; // sum over j of L^j
    ad::NodeId grad_x = ad::kNoNode, grad_eta = ad::kNoNode;
    std::unique_ptr<ad::Evaluator<S>> ev;
};

// inner(g, theta_nodes, x_node) -> scalar inner loss;
// outer(g, theta1_nodes, batch_x, batch_y) -> scalar outer loss L^j.
// The unrolled inner step theta1 = theta0 - eta * grad(inner) is built for
// each of the J replicas; replica losses are summed in fixed j order.
template <class S, class InnerFn, class OuterFn>
MetaGraphT<S> build_meta_graph(const Shape& x_shape, const std::vector<Shape>& theta_shapes,
                               const Shape& bx_shape, const Shape& by_shape, int J,
                               int inner_steps, InnerFn&& inner, OuterFn&& outer) {
    MetaGraphT<S> mg;
    mg.g = std::make_unique<ad::GraphT<S>>();
    ad::GraphT<S>& g = *mg.g;
    mg.x = g.var(x_shape, "x_tilde");
    mg.eta = g.var(Shape{}, "eta");
    mg.batch_x = g.var(bx_shape, "batch_x");
    mg.batch_y = g.var(by_shape, "batch_y");

    for (int j = 0; j < J; ++j) {
        std::vector<ad::NodeId> theta;
        for (size_t l = 0; l < theta_shapes.size(); ++l)
            theta.push_back(g.var(theta_shapes[l],
                                  "theta0_" + std::to_string(j) + "_" + std::to_string(l)));
        mg.theta0.push_back(theta);

        for (int s = 0; s < inner_steps; ++s) {
            ad::NodeId inner_loss = inner(g, std::span<const ad::NodeId>(theta), mg.x);
            auto grads = g.gradient(inner_loss, std::span<const ad::NodeId>(theta));
            std::vector<ad::NodeId> next;
            for (size_t l = 0; l < theta.size(); ++l)
                next.push_back(
                    g.sub(theta[l], g.mul(g.rep_full(mg.eta, theta_shapes[l]), grads[l])));
            theta = std::move(next);
        }

        ad::NodeId lj = outer(g, std::span<const ad::NodeId>(theta), mg.batch_x, mg.batch_y);
        mg.outer_sum = (j == 0) ? lj : g.add(mg.outer_sum, lj);
    }

    std::vector<ad::NodeId> wrt{mg.x, mg.eta};
    auto grads = g.gradient(mg.outer_sum, std::span<const ad::NodeId>(wrt));
    mg.grad_x = grads[0];
    mg.grad_eta = grads[1];
    mg.ev = std::make_unique<ad::Evaluator<S>>(g);
    std::vector<ad::NodeId> outs{mg.outer_sum, mg.grad_x, mg.grad_eta};
    mg.ev->prepare(std::span<const ad::NodeId>(outs));
    return mg;
}

// The model instantiation: inner loss is the mean cross-entropy of x_tilde
// under its fixed labels; outer loss is the mean cross-entropy of the fetched
// real batch under the stepped parameters.
template <class S>
MetaGraphT<S> build_model_meta_graph(const Architecture& arch, std::span<const int> labels,
                                     int batch, int J, int inner_steps) {
    const int n = int(labels.size());
    LayerPlan plan = layer_plan(arch);
    Shape x_shape{n, arch.height, arch.width, arch.channels};
    Shape bx_shape{batch, arch.height, arch.width, arch.channels};
    TensorT<S> label_values({int64_t(n)});
    for (int i = 0; i < n; ++i) label_values.data[size_t(i)] = S(labels[i]);

    auto inner = [&, label_values](ad::GraphT<S>& g, std::span<const ad::NodeId> theta,
                                   ad::NodeId x) {
        auto fwd = modelgraph::build_forward<S>(g, arch, n, theta, x);
        return g.mean_all(g.softmax_xent(fwd.logits, g.constant(label_values)));
    };
    auto outer = [&](ad::GraphT<S>& g, std::span<const ad::NodeId> theta1, ad::NodeId bx,
                     ad::NodeId by) {
        auto fwd = modelgraph::build_forward<S>(g, arch, batch, theta1, bx);
        return g.mean_all(g.softmax_xent(fwd.logits, by));
    };
    return build_meta_graph<S>(x_shape, plan.shapes, bx_shape, Shape{int64_t(batch)}, J,
                               inner_steps, inner, outer);
}

// ---------------------------------------------------------------------------
// Deterministic batch cycling (seeded shuffle per epoch-equivalent)
// ---------------------------------------------------------------------------

// Pure in t: batch t occupies global positions [t*M, (t+1)*M) of the
// concatenated per-epoch permutations, so a resumed run fetches exactly the
// batches the uninterrupted run would.
class BatchCycler {
public:
    BatchCycler(size_t pool_size, int batch, uint64_t seed)
        : a_(pool_size), m_(size_t(batch)), seed_(seed) {
        if (a_ == 0) throw Error("batch cycler: empty pool");
    }

    std::vector<size_t> batch_indices(uint64_t t) const {
        std::vector<size_t> out(m_);
        for (size_t i = 0; i < m_; ++i) {
            uint64_t global = t * m_ + i;
            out[i] = perm(global / a_)[size_t(global % a_)];
        }
        return out;
    }

private:
    const std::vector<size_t>& perm(uint64_t epoch) const {
        auto it = perms_.find(epoch);
        if (it != perms_.end()) return it->second;
        std::vector<size_t> p(a_);
        for (size_t i = 0; i < a_; ++i) p[i] = i;
        Rng rng(derive_seed(seed_, "batch-perm", epoch));
        rng.shuffle(p);
        return perms_.emplace(epoch, std::move(p)).first->second;
    }

    size_t a_;
    size_t m_;
    uint64_t seed_;
    mutable std::map<uint64_t, std::vector<size_t>> perms_;
};

// ---------------------------------------------------------------------------
// The outer loop (shared by the model problem and the toy problems in tests)
// ---------------------------------------------------------------------------

// theta0_at(t, j) -> layer tensors for replica j; batch_at(t) -> (bx, by);
// after_step(iteration, x, log_eta) fires after every update (snapshot hook).
// Returns the per-iteration mean outer loss (sum over j divided by J) and
// aborts with DivergenceError when that mean exceeds 10x its first value.
template <class S, class Theta0Fn, class BatchFn, class AfterFn>
std::vector<double> run_meta_loop(MetaGraphT<S>& mg, TensorT<S>& x, double& log_eta,
                                  uint32_t start_iter, uint32_t iters, double alpha,
                                  Theta0Fn&& theta0_at, BatchFn&& batch_at, AfterFn&& after_step) {
    const size_t J = mg.theta0.size();
    std::vector<double> trace;
    double baseline = 0.0;
    for (uint32_t t = start_iter; t < iters; ++t) {
        TensorT<S> eta_value(Shape{}, S(std::exp(log_eta)));
        std::vector<std::vector<TensorT<S>>> theta_values;
        theta_values.reserve(J);
        for (size_t j = 0; j < J; ++j) theta_values.push_back(theta0_at(t, j));
        auto [bx, by] = batch_at(t);

        ad::BindingsT<S> bind;
        bind.bind(mg.x, x).bind(mg.eta, eta_value);
        bind.bind(mg.batch_x, bx).bind(mg.batch_y, by);
        for (size_t j = 0; j < J; ++j)
            for (size_t l = 0; l < mg.theta0[j].size(); ++l)
                bind.bind(mg.theta0[j][l], theta_values[j][l]);
        mg.ev->run(bind);

        const double mean_outer = double(mg.ev->value(mg.outer_sum).scalar()) / double(J);
        if (trace.empty()) baseline = mean_outer;
        trace.push_back(mean_outer);
        if (mean_outer > 10.0 * baseline)
            throw DivergenceError("mean outer loss " + std::to_string(mean_outer) +
                                  " at iteration " + std::to_string(t) + " exceeds 10x initial " +
                                  std::to_string(baseline));

        const auto& gx = mg.ev->value(mg.grad_x);
        const double geta = double(mg.ev->value(mg.grad_eta).scalar());
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] -= S(alpha) * gx.data[i];
        log_eta -= alpha * std::exp(log_eta) * geta; // chain rule through log_eta
        after_step(t + 1, x, log_eta);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

// One plain gradient step (no momentum) on the cross-entropy loss of the
// distilled images under their fixed labels, step size exp(log_eta).
template <class S>
ModelParamsT<S> inner_step(const ModelParamsT<S>& theta0, const DistilledSet& distilled) {
    const int n = int(distilled.size());
    if (n == 0) throw Error("inner_step: empty distilled set");
    ad::GraphT<S> g;
    auto fwd = modelgraph::build_forward<S>(g, theta0.arch, n);
    TensorT<S> labels({int64_t(n)});
    for (int i = 0; i < n; ++i) labels.data[size_t(i)] = S(distilled.labels[size_t(i)]);
    ad::NodeId labels_var = g.var({int64_t(n)}, "labels");
    ad::NodeId loss = g.mean_all(g.softmax_xent(fwd.logits, labels_var));
    auto grads = g.gradient(loss, std::span<const ad::NodeId>(fwd.params));

    Tensor packed32 = pack_images(distilled.images);
    TensorT<S> packed = packed32.template cast<S>();
    ad::BindingsT<S> bind;
    detail::bind_params(bind, fwd, theta0);
    bind.bind(fwd.input, packed);
    bind.bind(labels_var, labels);
    ad::Evaluator<S> ev(g);
    ev.prepare(std::span<const ad::NodeId>(grads));
    ev.run(bind);

    ModelParamsT<S> theta1 = theta0;
    const S eta = S(distilled.eta());
    for (size_t l = 0; l < theta1.layers.size(); ++l)
        for (size_t i = 0; i < theta1.layers[l].data.size(); ++i)
            theta1.layers[l].data[i] -= eta * ev.value(grads[l]).data[i];
    return theta1;
}

// Mean cross-entropy of a real batch under the stepped parameters.
template <class S>
double outer_loss(const ModelParamsT<S>& theta1, const LabeledDataset& real_batch) {
    if (real_batch.size() == 0) throw Error("outer_loss: empty batch");
    validate_dataset(real_batch);
    std::vector<size_t> idx(real_batch.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    TensorT<S> batch = stack_batch<S>(real_batch.images, idx);
    TensorT<S> labels({int64_t(real_batch.size())});
    for (size_t i = 0; i < real_batch.size(); ++i) labels.data[i] = S(real_batch.labels[i]);

    ad::GraphT<S> g;
    auto fwd = modelgraph::build_forward<S>(g, theta1.arch, int64_t(real_batch.size()));
    ad::NodeId labels_var = g.var({int64_t(real_batch.size())}, "labels");
    ad::NodeId loss = g.mean_all(g.softmax_xent(fwd.logits, labels_var));
    ad::BindingsT<S> bind;
    detail::bind_params(bind, fwd, theta1);
    bind.bind(fwd.input, batch);
    bind.bind(labels_var, labels);
    return double(ad::eval(g, loss, bind).scalar());
}

struct DistillResult {
    DistilledSet set;
    std::vector<double> trace;           // per-iteration mean outer loss
    std::vector<DistilledSet> snapshots; // every snapshot_every iterations
};

// Alg.-style outer loop over the auxiliary dataset. Initial weights are
// resampled from the model initializer every iteration (J draws, derived
// seeds), real batches cycle through aux in seeded-shuffle order, and the
// final DistilledSet carries the provenance pair (config_hash, iteration).
// Passing `resume_from` continues from a snapshot; with the same seeds the
// continuation reproduces the uninterrupted run bit-for-bit. `on_snapshot`
// fires as each snapshot is taken, letting callers persist recovery points
// while the loop is still running.
inline DistillResult distill(const AuxiliaryDataset& aux, const Architecture& arch,
                             const DistillConfig& cfg, uint64_t config_hash = 0,
                             const DistilledSet* resume_from = nullptr,
                             const std::function<void(const DistilledSet&)>& on_snapshot = {}) {
    arch.validate();
    cfg.validate(arch.num_classes);
    if (aux.size() == 0) throw Error("distill: empty auxiliary dataset");

    DistillResult result;
    result.set = resume_from ? *resume_from : init_distilled(cfg, arch);
    result.set.config_hash = config_hash;
    if (int(result.set.size()) != cfg.resolved_n(arch.num_classes))
        throw Error("distill: resume snapshot has " + std::to_string(result.set.size()) +
                    " images, config wants " +
                    std::to_string(cfg.resolved_n(arch.num_classes)));

    // every distilled label must be represented in aux
    for (int k = 0; k < arch.num_classes; ++k) {
        bool found = false;
        for (int y : aux.pseudo_labels)
            if (y == k) found = true;
        if (!found) throw EmptyClassError(k);
    }

    const uint32_t start = resume_from ? resume_from->iteration : 0;
    if (start > uint32_t(cfg.iters))
        throw Error("distill: snapshot iteration " + std::to_string(start) +
                    " is past configured iters " + std::to_string(cfg.iters));

    auto mg = build_model_meta_graph<float>(arch, result.set.labels, cfg.batch, cfg.weight_draws,
                                            cfg.inner_steps);
    BatchCycler cycler(aux.size(), cfg.batch, cfg.seed);

    Tensor x = pack_images(result.set.images);
    double log_eta = result.set.log_eta;

    auto theta0_at = [&](uint32_t t, size_t j) {
        uint64_t draw = uint64_t(t) * uint64_t(cfg.weight_draws) + j;
        return init_params_t<float>(arch, derive_seed(cfg.seed, "theta0", draw)).layers;
    };
    auto batch_at = [&](uint32_t t) {
        std::vector<size_t> idx = cycler.batch_indices(t);
        Tensor bx = stack_batch<float>(aux.images, idx);
        Tensor by({int64_t(idx.size())});
        for (size_t i = 0; i < idx.size(); ++i) by.data[i] = float(aux.pseudo_labels[idx[i]]);
        return std::pair{bx, by};
    };
    auto after_step = [&](uint32_t iteration, const Tensor& x_now, double log_eta_now) {
        bool at_interval = cfg.snapshot_every > 0 && iteration % uint32_t(cfg.snapshot_every) == 0;
        bool at_end = cfg.snapshot_every > 0 && iteration == uint32_t(cfg.iters);
        if (!at_interval && !at_end) return;
        DistilledSet snap;
        snap.images = unpack_images(x_now);
        snap.labels = result.set.labels;
        snap.log_eta = log_eta_now;
        snap.config_hash = config_hash;
        snap.iteration = iteration;
        if (on_snapshot) on_snapshot(snap);
        result.snapshots.push_back(std::move(snap));
    };

    result.trace = run_meta_loop<float>(mg, x, log_eta, start, uint32_t(cfg.iters), cfg.alpha,
                                        theta0_at, batch_at, after_step);
    result.set.images = unpack_images(x);
    result.set.log_eta = log_eta;
    result.set.iteration = uint32_t(cfg.iters);
    return result;
}

// ---------------------------------------------------------------------------
// Meta-gradient verification (64-bit)
// ---------------------------------------------------------------------------

struct MetaGradientCheck {
    double err_x = 0.0;
    double err_eta = 0.0;
    double max_err() const { return err_x > err_eta ? err_x : err_eta; }
};

// Central finite differences of the full pipeline inner_step -> outer_loss
// against the engine's meta-gradients, at the point given by `distilled`.
inline MetaGradientCheck meta_gradient_check(const DistilledSet& distilled,
                                             const std::vector<ModelParamsT<double>>& theta0,
                                             const LabeledDataset& real_batch, double eps) {
    if (theta0.empty()) throw Error("meta_gradient_check: no initial-weight draws");
    const Architecture& arch = theta0[0].arch;
    const int J = int(theta0.size());
    auto mg = build_model_meta_graph<double>(arch, distilled.labels, int(real_batch.size()), J, 1);

    Tensor64 x = pack_images(distilled.images).cast<double>();
    Tensor64 eta_value(Shape{}, std::exp(distilled.log_eta));
    std::vector<size_t> idx(real_batch.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Tensor64 bx = stack_batch<double>(real_batch.images, idx);
    Tensor64 by({int64_t(real_batch.size())});
    for (size_t i = 0; i < real_batch.size(); ++i) by.data[i] = double(real_batch.labels[i]);

    auto bind_all = [&](ad::Bindings64& b, const Tensor64& xv, const Tensor64& ev) {
        b.bind(mg.x, xv).bind(mg.eta, ev);
        b.bind(mg.batch_x, bx).bind(mg.batch_y, by);
        for (size_t j = 0; j < size_t(J); ++j)
            for (size_t l = 0; l < mg.theta0[j].size(); ++l)
                b.bind(mg.theta0[j][l], theta0[j].layers[l]);
    };

    ad::Bindings64 base;
    bind_all(base, x, eta_value);
    mg.ev->run(base);
    Tensor64 engine_gx = mg.ev->value(mg.grad_x);
    Tensor64 engine_geta = mg.ev->value(mg.grad_eta);

    auto loss_at = [&](const Tensor64& xv, const Tensor64& ev) {
        ad::Bindings64 b;
        bind_all(b, xv, ev);
        return ad::eval(*mg.g, mg.outer_sum, b).scalar();
    };
    Tensor64 fd_gx = ad::finite_diff([&](const Tensor64& p) { return loss_at(p, eta_value); }, x,
                                     eps);
    Tensor64 fd_geta = ad::finite_diff(
        [&](const Tensor64& p) { return loss_at(x, p); }, eta_value, eps);

    MetaGradientCheck check;
    check.err_x = ad::max_rel_err(engine_gx, fd_gx);
    check.err_eta = ad::max_rel_err(engine_geta, fd_geta);
    return check;
}

// ---------------------------------------------------------------------------
// ODDS persistence
// ---------------------------------------------------------------------------

inline constexpr uint16_t kDistilledFormatVersion = 1;
inline constexpr const char* kDistilledMagic = "ODDS";

inline void save_distilled(const std::string& path, const DistilledSet& set) {
    if (set.images.empty()) throw Error("save_distilled: empty set");
    Shape one = uniform_image_shape(set.images);
    if (one.size() != 3) throw ShapeError("distilled images must be rank-3 {H, W, C}");
    if (set.labels.size() != set.images.size())
        throw Error("save_distilled: image/label count mismatch");
    auto os = io::open_out(path);
    io::write_magic(os, kDistilledMagic);
    io::write_u16(os, kDistilledFormatVersion);
    io::write_u16(os, uint16_t(set.images.size()));
    io::write_u16(os, uint16_t(one[0]));
    io::write_u16(os, uint16_t(one[1]));
    io::write_u8(os, uint8_t(one[2]));
    for (int y : set.labels) io::write_u16(os, uint16_t(y));
    for (const auto& img : set.images)
        for (float v : img.data) io::write_f32(os, v);
    io::write_f64(os, set.log_eta);
    io::write_u32(os, set.iteration);
    io::write_u64(os, set.config_hash);
    if (!os) throw Error("write failed: " + path);
}

inline DistilledSet load_distilled(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kDistilledMagic, "distilled set");
    uint16_t ver = io::read_u16(is);
    if (ver != kDistilledFormatVersion)
        throw CorruptHeaderError("distilled set: unsupported version " + std::to_string(ver));
    uint16_t n = io::read_u16(is);
    int64_t h = io::read_u16(is), w = io::read_u16(is), c = io::read_u8(is);
    if (n < 1 || h < 1 || w < 1 || c < 1)
        throw CorruptHeaderError("distilled set: degenerate dimensions");
    DistilledSet set;
    for (uint16_t i = 0; i < n; ++i) set.labels.push_back(int(io::read_u16(is)));
    for (uint16_t i = 0; i < n; ++i) {
        Tensor img({h, w, c});
        for (auto& v : img.data) v = io::read_f32(is);
        set.images.push_back(std::move(img));
    }
    set.log_eta = io::read_f64(is);
    set.iteration = io::read_u32(is);
    set.config_hash = io::read_u64(is);
    io::expect_eof(is, "distilled set");
    return set;
}

} // namespace od
