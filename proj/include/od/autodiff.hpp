#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "od/graph.hpp"

namespace od::ad {

template <class S>
struct BindingsT {
    std::vector<std::pair<NodeId, const TensorT<S>*>> items;

    BindingsT& bind(NodeId id, const TensorT<S>& t) {
        items.emplace_back(id, &t);
        return *this;
    }
    void clear() { items.clear(); }
};

using Bindings = BindingsT<float>;
using Bindings64 = BindingsT<double>;

// Per-thread evaluation context. prepare() fixes the set of requested outputs
// and their ancestor schedule; run() recomputes values for fresh bindings,
// reusing buffers. Evaluation is sequential in node-id order, so results are
// bit-identical across runs with identical bindings.
template <class S>
class Evaluator {
public:
    explicit Evaluator(const GraphT<S>& g) : g_(&g) {}

    Evaluator& prepare(std::span<const NodeId> outs) {
        const size_t n = g_->size();
        values_.resize(n);
        std::vector<char> needed(n, 0);
        std::vector<NodeId> stack(outs.begin(), outs.end());
        while (!stack.empty()) {
            NodeId id = stack.back();
            stack.pop_back();
            if (needed[size_t(id)]) continue;
            needed[size_t(id)] = 1;
            for (NodeId in : g_->node(id).inputs) stack.push_back(in);
        }
        schedule_.clear();
        for (size_t id = 0; id < n; ++id) {
            if (!needed[id]) continue;
            const auto& node = g_->node(NodeId(id));
            if (node.op == Op::Const) {
                if (!node.value.all_finite())
                    throw NonFiniteError("const node " + std::to_string(id));
                values_[id] = node.value;
            } else {
                schedule_.push_back(NodeId(id));
            }
        }
        return *this;
    }

    Evaluator& prepare(std::initializer_list<NodeId> outs) {
        std::vector<NodeId> v(outs);
        return prepare(std::span<const NodeId>(v));
    }

    void run(const BindingsT<S>& bindings) {
        for (NodeId id : schedule_) {
            const auto& node = g_->node(id);
            TensorT<S>& out = values_[size_t(id)];
            out.shape = node.shape;
            out.data.resize(size_t(shape_numel(node.shape)));
            compute(id, node, bindings, out);
            if (!out.all_finite())
                throw NonFiniteError(std::string(op_name(node.op)) + " node " +
                                     std::to_string(id));
        }
    }

    const TensorT<S>& value(NodeId id) const { return values_[size_t(id)]; }

private:
    void compute(NodeId id, const NodeT<S>& node, const BindingsT<S>& bindings, TensorT<S>& out) {
        auto in = [&](size_t i) -> const TensorT<S>& {
            return values_[size_t(node.inputs[i])];
        };
        switch (node.op) {
            case Op::Var: {
                const TensorT<S>* bound = nullptr;
                for (const auto& [vid, t] : bindings.items)
                    if (vid == id) bound = t;
                if (!bound) throw Error("unbound variable: " + g_->var_name(id));
                if (bound->shape != node.shape)
                    throw ShapeError("binding for " + g_->var_name(id) + " has shape " +
                                     shape_str(bound->shape) + ", variable declared " +
                                     shape_str(node.shape));
                out.data = bound->data;
                break;
            }
            case Op::Const:
                out = node.value; // only hit if a Const is its own requested output
                break;
            case Op::Add: {
                const auto &a = in(0), &b = in(1);
                for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
                break;
            }
            case Op::Scale: {
                const auto& a = in(0);
                const S c = S(node.factor);
                for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * a.data[i];
                break;
            }
            case Op::Mul: {
                const auto &a = in(0), &b = in(1);
                for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
                break;
            }
            case Op::MatMul:
                matmul_kernel(node, in(0), in(1), out);
                break;
            case Op::Relu: {
                const auto& a = in(0);
                for (size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] = a.data[i] > S(0) ? a.data[i] : S(0);
                break;
            }
            case Op::Heaviside: {
                const auto& a = in(0);
                for (size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] = a.data[i] > S(0) ? S(1) : S(0);
                break;
            }
            case Op::Tanh: {
                const auto& a = in(0);
                for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = S(std::tanh(double(a.data[i])));
                break;
            }
            case Op::Reshape:
                out.data = in(0).data;
                break;
            case Op::SumRows: {
                const auto& a = in(0);
                const int64_t n = a.shape[0], m = a.shape[1];
                std::fill(out.data.begin(), out.data.end(), S(0));
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) out.data[size_t(j)] += a.data[size_t(i * m + j)];
                break;
            }
            case Op::SumCols: {
                const auto& a = in(0);
                const int64_t n = a.shape[0], m = a.shape[1];
                for (int64_t i = 0; i < n; ++i) {
                    S acc = S(0);
                    for (int64_t j = 0; j < m; ++j) acc += a.data[size_t(i * m + j)];
                    out.data[size_t(i)] = acc;
                }
                break;
            }
            case Op::RepRows: {
                const auto& v = in(0);
                const int64_t n = node.shape[0], m = node.shape[1];
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) out.data[size_t(i * m + j)] = v.data[size_t(j)];
                break;
            }
            case Op::RepCols: {
                const auto& v = in(0);
                const int64_t n = node.shape[0], m = node.shape[1];
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) out.data[size_t(i * m + j)] = v.data[size_t(i)];
                break;
            }
            case Op::SumAll: {
                const auto& a = in(0);
                S acc = S(0);
                for (S v : a.data) acc += v;
                out.data[0] = acc;
                break;
            }
            case Op::RepFull: {
                const S v = in(0).data[0];
                std::fill(out.data.begin(), out.data.end(), v);
                break;
            }
            case Op::Softmax: {
                const auto& a = in(0);
                const int64_t n = a.shape[0], m = a.shape[1];
                for (int64_t i = 0; i < n; ++i) {
                    const S* row = a.data.data() + i * m;
                    S* orow = out.data.data() + i * m;
                    S mx = row[0];
                    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
                    S sum = S(0);
                    for (int64_t j = 0; j < m; ++j) {
                        orow[j] = S(std::exp(double(row[j] - mx)));
                        sum += orow[j];
                    }
                    for (int64_t j = 0; j < m; ++j) orow[j] /= sum;
                }
                break;
            }
            case Op::SoftmaxXent: {
                const auto& logits = in(0);
                const auto& labels = in(1);
                const int64_t n = logits.shape[0], m = logits.shape[1];
                for (int64_t i = 0; i < n; ++i) {
                    const int64_t y = label_at(labels, i, m);
                    const S* row = logits.data.data() + i * m;
                    S mx = row[0];
                    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
                    double sum = 0;
                    for (int64_t j = 0; j < m; ++j) sum += std::exp(double(row[j] - mx));
                    out.data[size_t(i)] = S(std::log(sum) - double(row[y] - mx));
                }
                break;
            }
            case Op::OneHot: {
                const auto& labels = in(0);
                const int64_t n = labels.shape[0], m = node.classes;
                std::fill(out.data.begin(), out.data.end(), S(0));
                for (int64_t i = 0; i < n; ++i)
                    out.data[size_t(i * m + label_at(labels, i, m))] = S(1);
                break;
            }
            case Op::Im2Col:
                im2col_gather(node.conv, in(0), out);
                break;
            case Op::Col2Im:
                col2im_scatter(node.conv, in(0), out);
                break;
            case Op::AvgPool2:
                avgpool2_kernel(in(0), out);
                break;
            case Op::UnpoolAvg2:
                unpool_avg2_kernel(in(0), out);
                break;
        }
    }

    static int64_t label_at(const TensorT<S>& labels, int64_t i, int64_t m) {
        const double v = double(labels.data[size_t(i)]);
        const int64_t y = int64_t(std::llround(v));
        if (double(y) != v || y < 0 || y >= m)
            throw Error("label out of range: sample " + std::to_string(i) + " has label " +
                        std::to_string(v) + ", class count " + std::to_string(m));
        return y;
    }

    static void matmul_kernel(const NodeT<S>& node, const TensorT<S>& a, const TensorT<S>& b,
                              TensorT<S>& out) {
        const int64_t n = node.shape[0], m = node.shape[1];
        const int64_t k = node.ta ? a.shape[0] : a.shape[1];
        std::fill(out.data.begin(), out.data.end(), S(0));
        S* o = out.data.data();
        const S* pa = a.data.data();
        const S* pb = b.data.data();
        if (!node.ta && !node.tb) {
            for (int64_t i = 0; i < n; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    const S av = pa[i * k + p];
                    const S* brow = pb + p * m;
                    S* orow = o + i * m;
                    for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
                }
        } else if (!node.ta && node.tb) {
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) {
                    const S* arow = pa + i * k;
                    const S* brow = pb + j * k;
                    S acc = S(0);
                    for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                    o[i * m + j] = acc;
                }
        } else if (node.ta && !node.tb) {
            for (int64_t p = 0; p < k; ++p)
                for (int64_t i = 0; i < n; ++i) {
                    const S av = pa[p * n + i];
                    const S* brow = pb + p * m;
                    S* orow = o + i * m;
                    for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
                }
        } else {
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) {
                    S acc = S(0);
                    for (int64_t p = 0; p < k; ++p) acc += pa[p * n + i] * pb[j * k + p];
                    o[i * m + j] = acc;
                }
        }
    }

    // walks the fixed index map of one im2col application; fn(xi, ci) gets
    // the image flat index (or -1 when the tap lands in padding) and the
    // cols flat index
    template <class Fn>
    static void for_each_tap(const ConvSpec& cs, Fn&& fn) {
        const int64_t K = cs.kernel, C = cs.in_c;
        for (int64_t b = 0; b < cs.batch; ++b)
            for (int64_t oh = 0; oh < cs.out_h; ++oh)
                for (int64_t ow = 0; ow < cs.out_w; ++ow) {
                    const int64_t row = ((b * cs.out_h) + oh) * cs.out_w + ow;
                    for (int64_t kh = 0; kh < K; ++kh) {
                        const int64_t ih = oh * cs.stride - cs.pad + kh;
                        for (int64_t kw = 0; kw < K; ++kw) {
                            const int64_t iw = ow * cs.stride - cs.pad + kw;
                            const bool inside =
                                ih >= 0 && ih < cs.in_h && iw >= 0 && iw < cs.in_w;
                            for (int64_t c = 0; c < C; ++c) {
                                const int64_t col = ((kh * K) + kw) * C + c;
                                const int64_t ci = row * (K * K * C) + col;
                                const int64_t xi =
                                    inside ? ((b * cs.in_h + ih) * cs.in_w + iw) * C + c : -1;
                                fn(xi, ci);
                            }
                        }
                    }
                }
    }

    static void im2col_gather(const ConvSpec& cs, const TensorT<S>& image, TensorT<S>& cols) {
        for_each_tap(cs, [&](int64_t xi, int64_t ci) {
            cols.data[size_t(ci)] = xi < 0 ? S(0) : image.data[size_t(xi)];
        });
    }

    static void col2im_scatter(const ConvSpec& cs, const TensorT<S>& cols, TensorT<S>& image) {
        std::fill(image.data.begin(), image.data.end(), S(0));
        for_each_tap(cs, [&](int64_t xi, int64_t ci) {
            if (xi >= 0) image.data[size_t(xi)] += cols.data[size_t(ci)];
        });
    }

    static void avgpool2_kernel(const TensorT<S>& big, TensorT<S>& small) {
        const Shape& ss = small.shape;
        const int64_t B = ss[0], OH = ss[1], OW = ss[2], C = ss[3];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < OH; ++i)
                for (int64_t j = 0; j < OW; ++j)
                    for (int64_t c = 0; c < C; ++c) {
                        S acc = S(0);
                        for (int64_t di = 0; di < 2; ++di)
                            for (int64_t dj = 0; dj < 2; ++dj)
                                acc += big.data[size_t(
                                    ((b * 2 * OH + 2 * i + di) * 2 * OW + 2 * j + dj) * C + c)];
                        small.data[size_t(((b * OH + i) * OW + j) * C + c)] = acc / S(4);
                    }
    }

    static void unpool_avg2_kernel(const TensorT<S>& small, TensorT<S>& big) {
        const Shape& ss = small.shape;
        const int64_t B = ss[0], OH = ss[1], OW = ss[2], C = ss[3];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < OH; ++i)
                for (int64_t j = 0; j < OW; ++j)
                    for (int64_t c = 0; c < C; ++c) {
                        const S v = small.data[size_t(((b * OH + i) * OW + j) * C + c)] / S(4);
                        for (int64_t di = 0; di < 2; ++di)
                            for (int64_t dj = 0; dj < 2; ++dj)
                                big.data[size_t(
                                    ((b * 2 * OH + 2 * i + di) * 2 * OW + 2 * j + dj) * C + c)] =
                                    v;
                    }
    }

    const GraphT<S>* g_;
    std::vector<TensorT<S>> values_;
    std::vector<NodeId> schedule_;
};

// One-shot evaluation of a single node.
template <class S>
TensorT<S> eval(const GraphT<S>& g, NodeId out, const BindingsT<S>& bindings) {
    Evaluator<S> ev(g);
    ev.prepare({out});
    ev.run(bindings);
    return ev.value(out);
}

// Central-difference gradient estimate of a scalar-valued fn at point.
// The verification oracle for everything gradient() produces.
template <class S, class Fn>
TensorT<S> finite_diff(Fn&& fn, const TensorT<S>& point, double eps) {
    if (eps <= 0) throw Error("finite_diff: eps must be positive");
    TensorT<S> grad(point.shape, S(0));
    TensorT<S> probe = point;
    for (size_t i = 0; i < point.data.size(); ++i) {
        const S orig = probe.data[i];
        probe.data[i] = S(double(orig) + eps);
        const double up = double(fn(std::as_const(probe)));
        probe.data[i] = S(double(orig) - eps);
        const double down = double(fn(std::as_const(probe)));
        probe.data[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NonFiniteError("finite_diff: fn returned non-finite value");
        grad.data[i] = S((up - down) / (2.0 * eps));
    }
    return grad;
}

// max_i |a_i - b_i| / max(inf-norm of a, inf-norm of b, floor)
template <class S>
double max_rel_err(const TensorT<S>& a, const TensorT<S>& b, double floor = 1e-8) {
    if (a.shape != b.shape)
        throw ShapeError("max_rel_err: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double scale = floor;
    for (size_t i = 0; i < a.data.size(); ++i)
        scale = std::max({scale, std::abs(double(a.data[i])), std::abs(double(b.data[i]))});
    double worst = 0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(double(a.data[i]) - double(b.data[i])) / scale);
    return worst;
}

} // namespace od::ad
