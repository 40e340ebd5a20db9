#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "od/errors.hpp"
#include "od/tensor.hpp"

namespace od::ad {

using od::Shape;
using od::TensorT;

using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

// Closed op set. Every rule in GraphT::gradient() emits only ops from this
// enum, so gradients of gradients stay inside the engine.
enum class Op : uint8_t {
    Var,
    Const,
    Add,        // same-shape elementwise a + b
    Scale,      // c * a, c a build-time constant
    Mul,        // elementwise a * b
    MatMul,     // 2-D product with optional transposes
    Relu,
    Heaviside,  // 1 where x > 0 else 0 (relu'(0) == 0); derivative treated as 0
    Tanh,
    Reshape,
    SumRows,    // n x m -> m   (sum over axis 0)
    SumCols,    // n x m -> n   (sum over axis 1)
    RepRows,    // m -> n x m   (each row a copy)
    RepCols,    // n -> n x m   (each column a copy)
    SumAll,     // any -> scalar
    RepFull,    // scalar -> any shape
    Softmax,    // row-wise over n x m
    SoftmaxXent,// (logits n x m, labels n) -> n per-sample losses
    OneHot,     // labels n -> n x m; labels are data, not differentiated
    Im2Col,     // B x H x W x C -> (B*OH*OW) x (K*K*C), zero padding
    Col2Im,     // adjoint layout of Im2Col
    AvgPool2,   // B x H x W x C -> B x H/2 x W/2 x C
    UnpoolAvg2, // inverse layout of AvgPool2, spreads v/4
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Var: return "var";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Scale: return "scale";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Relu: return "relu";
        case Op::Heaviside: return "heaviside";
        case Op::Tanh: return "tanh";
        case Op::Reshape: return "reshape";
        case Op::SumRows: return "sum_rows";
        case Op::SumCols: return "sum_cols";
        case Op::RepRows: return "rep_rows";
        case Op::RepCols: return "rep_cols";
        case Op::SumAll: return "sum_all";
        case Op::RepFull: return "rep_full";
        case Op::Softmax: return "softmax";
        case Op::SoftmaxXent: return "softmax_xent";
        case Op::OneHot: return "onehot";
        case Op::Im2Col: return "im2col";
        case Op::Col2Im: return "col2im";
        case Op::AvgPool2: return "avgpool2";
        case Op::UnpoolAvg2: return "unpool_avg2";
    }
    return "?";
}

// Geometry of one im2col/col2im application, fixed at build time.
struct ConvSpec {
    int64_t batch = 0, in_h = 0, in_w = 0, in_c = 0;
    int64_t kernel = 0, stride = 1, pad = 0;
    int64_t out_h = 0, out_w = 0;

    bool operator==(const ConvSpec&) const = default;
};

template <class S>
struct NodeT {
    Op op;
    Shape shape;
    std::vector<NodeId> inputs;
    double factor = 0.0;   // Scale
    bool ta = false;       // MatMul: transpose first operand
    bool tb = false;       // MatMul: transpose second operand
    int64_t classes = 0;   // OneHot
    ConvSpec conv;         // Im2Col / Col2Im
    TensorT<S> value;      // Const payload
};

// A computation graph over dense tensors. Nodes are appended in topological
// order (inputs always precede consumers) and never mutated afterwards;
// gradient() grows the graph with ordinary nodes, which is what makes
// second-order differentiation work. Safe to share across threads once
// construction is done; evaluation state lives in per-thread Evaluators.
template <class S>
class GraphT {
public:
    NodeId var(Shape shape, std::string name = "") {
        NodeId id = push({Op::Var, std::move(shape), {}});
        if (name.empty()) name = "v" + std::to_string(id);
        var_names_.emplace_back(id, std::move(name));
        return id;
    }

    NodeId constant(TensorT<S> t) {
        Shape sh = t.shape;
        NodeT<S> n{Op::Const, std::move(sh), {}};
        n.value = std::move(t);
        return push(std::move(n));
    }

    NodeId constant_fill(const Shape& shape, S v) { return constant(TensorT<S>(shape, v)); }

    NodeId add(NodeId a, NodeId b) {
        require_same_shape("add", a, b);
        return push({Op::Add, nodes_[a].shape, {a, b}});
    }

    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

    NodeId scale(NodeId a, double c) {
        NodeT<S> n{Op::Scale, nodes_[a].shape, {a}};
        n.factor = c;
        return push(std::move(n));
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape("mul", a, b);
        return push({Op::Mul, nodes_[a].shape, {a, b}});
    }

    NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false) {
        const Shape& sa = nodes_[a].shape;
        const Shape& sb = nodes_[b].shape;
        if (sa.size() != 2 || sb.size() != 2)
            throw ShapeError("matmul needs rank-2 operands, got " + shape_str(sa) + " and " +
                             shape_str(sb));
        int64_t ar = ta ? sa[1] : sa[0], ak = ta ? sa[0] : sa[1];
        int64_t bk = tb ? sb[1] : sb[0], bc = tb ? sb[0] : sb[1];
        if (ak != bk)
            throw ShapeError("matmul inner extents " + std::to_string(ak) + " vs " +
                             std::to_string(bk));
        NodeT<S> n{Op::MatMul, Shape{ar, bc}, {a, b}};
        n.ta = ta;
        n.tb = tb;
        return push(std::move(n));
    }

    NodeId relu(NodeId a) { return push({Op::Relu, nodes_[a].shape, {a}}); }
    NodeId heaviside(NodeId a) { return push({Op::Heaviside, nodes_[a].shape, {a}}); }
    NodeId tanh_(NodeId a) { return push({Op::Tanh, nodes_[a].shape, {a}}); }

    NodeId reshape(NodeId a, Shape target) {
        if (shape_numel(target) != shape_numel(nodes_[a].shape))
            throw ShapeError("reshape " + shape_str(nodes_[a].shape) + " -> " + shape_str(target));
        return push({Op::Reshape, std::move(target), {a}});
    }

    NodeId sum_rows(NodeId a) {
        require_rank2("sum_rows", a);
        return push({Op::SumRows, Shape{nodes_[a].shape[1]}, {a}});
    }

    NodeId sum_cols(NodeId a) {
        require_rank2("sum_cols", a);
        return push({Op::SumCols, Shape{nodes_[a].shape[0]}, {a}});
    }

    NodeId rep_rows(NodeId v, int64_t n) {
        require_rank1("rep_rows", v);
        return push({Op::RepRows, Shape{n, nodes_[v].shape[0]}, {v}});
    }

    NodeId rep_cols(NodeId v, int64_t m) {
        require_rank1("rep_cols", v);
        return push({Op::RepCols, Shape{nodes_[v].shape[0], m}, {v}});
    }

    NodeId sum_all(NodeId a) { return push({Op::SumAll, Shape{}, {a}}); }

    NodeId rep_full(NodeId s, Shape target) {
        if (!nodes_[s].shape.empty())
            throw ShapeError("rep_full needs a scalar, got " + shape_str(nodes_[s].shape));
        return push({Op::RepFull, std::move(target), {s}});
    }

    NodeId mean_all(NodeId a) {
        int64_t n = shape_numel(nodes_[a].shape);
        return scale(sum_all(a), 1.0 / double(n));
    }

    NodeId softmax(NodeId a) {
        require_rank2("softmax", a);
        return push({Op::Softmax, nodes_[a].shape, {a}});
    }

    // labels ride as a rank-1 tensor of integral values; they are inputs,
    // never differentiated
    NodeId softmax_xent(NodeId logits, NodeId labels) {
        require_rank2("softmax_xent", logits);
        require_rank1("softmax_xent labels", labels);
        if (nodes_[labels].shape[0] != nodes_[logits].shape[0])
            throw ShapeError("softmax_xent batch " + std::to_string(nodes_[logits].shape[0]) +
                             " vs labels " + std::to_string(nodes_[labels].shape[0]));
        return push({Op::SoftmaxXent, Shape{nodes_[logits].shape[0]}, {logits, labels}});
    }

    NodeId onehot(NodeId labels, int64_t m) {
        require_rank1("onehot", labels);
        NodeT<S> n{Op::OneHot, Shape{nodes_[labels].shape[0], m}, {labels}};
        n.classes = m;
        return push(std::move(n));
    }

    NodeId im2col(NodeId x, int64_t kernel, int64_t stride, int64_t pad) {
        const Shape& s = nodes_[x].shape;
        if (s.size() != 4)
            throw ShapeError("im2col needs B x H x W x C, got " + shape_str(s));
        ConvSpec cs;
        cs.batch = s[0];
        cs.in_h = s[1];
        cs.in_w = s[2];
        cs.in_c = s[3];
        cs.kernel = kernel;
        cs.stride = stride;
        cs.pad = pad;
        cs.out_h = (cs.in_h + 2 * pad - kernel) / stride + 1;
        cs.out_w = (cs.in_w + 2 * pad - kernel) / stride + 1;
        if (cs.out_h <= 0 || cs.out_w <= 0)
            throw ShapeError("im2col produces empty output for " + shape_str(s));
        NodeT<S> n{Op::Im2Col, Shape{cs.batch * cs.out_h * cs.out_w, kernel * kernel * cs.in_c},
                   {x}};
        n.conv = cs;
        return push(std::move(n));
    }

    NodeId col2im(NodeId cols, const ConvSpec& cs) {
        const Shape& s = nodes_[cols].shape;
        Shape want{cs.batch * cs.out_h * cs.out_w, cs.kernel * cs.kernel * cs.in_c};
        if (s != want)
            throw ShapeError("col2im input " + shape_str(s) + ", expected " + shape_str(want));
        NodeT<S> n{Op::Col2Im, Shape{cs.batch, cs.in_h, cs.in_w, cs.in_c}, {cols}};
        n.conv = cs;
        return push(std::move(n));
    }

    NodeId avgpool2(NodeId x) {
        const Shape& s = nodes_[x].shape;
        if (s.size() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0)
            throw ShapeError("avgpool2 needs B x H x W x C with even H, W; got " + shape_str(s));
        return push({Op::AvgPool2, Shape{s[0], s[1] / 2, s[2] / 2, s[3]}, {x}});
    }

    NodeId unpool_avg2(NodeId y) {
        const Shape& s = nodes_[y].shape;
        if (s.size() != 4)
            throw ShapeError("unpool_avg2 needs rank-4 input, got " + shape_str(s));
        return push({Op::UnpoolAvg2, Shape{s[0], s[1] * 2, s[2] * 2, s[3]}, {y}});
    }

    // Reverse-mode differentiation, emitted as graph nodes. Returns one node
    // per wrt entry computing d(scalar_node)/d(var). Because the adjoints are
    // ordinary nodes, calling gradient() on a result produces second-order
    // terms. A wrt variable the scalar does not depend on yields a zero
    // constant of the variable's shape.
    std::vector<NodeId> gradient(NodeId scalar_node, std::span<const NodeId> wrt) {
        if (!nodes_[scalar_node].shape.empty())
            throw ShapeError("gradient target must be scalar, got " +
                             shape_str(nodes_[scalar_node].shape));

        const NodeId top = scalar_node;
        std::vector<char> reachable(size_t(top) + 1, 0);
        reachable[size_t(top)] = 1;
        for (NodeId id = top; id >= 0; --id) {
            if (!reachable[size_t(id)]) continue;
            for (NodeId in : nodes_[size_t(id)].inputs) reachable[size_t(in)] = 1;
        }

        std::vector<NodeId> adj(size_t(top) + 1, kNoNode);
        adj[size_t(top)] = constant(tensor_scalar<S>(S(1)));

        auto accumulate = [&](NodeId target, NodeId contribution) {
            if (adj[size_t(target)] == kNoNode)
                adj[size_t(target)] = contribution;
            else
                adj[size_t(target)] = add(adj[size_t(target)], contribution);
        };

        for (NodeId id = top; id >= 0; --id) {
            if (!reachable[size_t(id)] || adj[size_t(id)] == kNoNode) continue;
            const NodeId g = adj[size_t(id)];
            // snapshot: backprop rules append nodes, invalidating references
            const Op op = nodes_[size_t(id)].op;
            const auto inputs = nodes_[size_t(id)].inputs;
            switch (op) {
                case Op::Var:
                case Op::Const:
                case Op::Heaviside:
                case Op::OneHot:
                    break;
                case Op::Add:
                    accumulate(inputs[0], g);
                    accumulate(inputs[1], g);
                    break;
                case Op::Scale:
                    accumulate(inputs[0], scale(g, nodes_[size_t(id)].factor));
                    break;
                case Op::Mul:
                    accumulate(inputs[0], mul(g, inputs[1]));
                    accumulate(inputs[1], mul(g, inputs[0]));
                    break;
                case Op::MatMul: {
                    const bool ta = nodes_[size_t(id)].ta, tb = nodes_[size_t(id)].tb;
                    const NodeId a = inputs[0], b = inputs[1];
                    accumulate(a, ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb));
                    accumulate(b, tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false));
                    break;
                }
                case Op::Relu:
                    accumulate(inputs[0], mul(g, heaviside(inputs[0])));
                    break;
                case Op::Tanh: {
                    // d tanh = 1 - tanh^2, expressed with in-set ops
                    NodeId t2 = mul(id, id);
                    NodeId ones = constant_fill(nodes_[size_t(id)].shape, S(1));
                    accumulate(inputs[0], mul(g, sub(ones, t2)));
                    break;
                }
                case Op::Reshape:
                    accumulate(inputs[0], reshape(g, nodes_[size_t(inputs[0])].shape));
                    break;
                case Op::SumRows:
                    accumulate(inputs[0], rep_rows(g, nodes_[size_t(inputs[0])].shape[0]));
                    break;
                case Op::SumCols:
                    accumulate(inputs[0], rep_cols(g, nodes_[size_t(inputs[0])].shape[1]));
                    break;
                case Op::RepRows:
                    accumulate(inputs[0], sum_rows(g));
                    break;
                case Op::RepCols:
                    accumulate(inputs[0], sum_cols(g));
                    break;
                case Op::SumAll:
                    accumulate(inputs[0], rep_full(g, nodes_[size_t(inputs[0])].shape));
                    break;
                case Op::RepFull:
                    accumulate(inputs[0], sum_all(g));
                    break;
                case Op::Softmax: {
                    const int64_t m = nodes_[size_t(id)].shape[1];
                    NodeId gp = mul(g, id);
                    NodeId inner = rep_cols(sum_cols(gp), m);
                    accumulate(inputs[0], mul(id, sub(g, inner)));
                    break;
                }
                case Op::SoftmaxXent: {
                    const NodeId logits = inputs[0], labels = inputs[1];
                    const int64_t m = nodes_[size_t(logits)].shape[1];
                    NodeId diff = sub(softmax(logits), onehot(labels, m));
                    accumulate(logits, mul(rep_cols(g, m), diff));
                    break;
                }
                case Op::Im2Col:
                    accumulate(inputs[0], col2im(g, nodes_[size_t(id)].conv));
                    break;
                case Op::Col2Im: {
                    const ConvSpec& cs = nodes_[size_t(id)].conv;
                    accumulate(inputs[0], im2col(g, cs.kernel, cs.stride, cs.pad));
                    break;
                }
                case Op::AvgPool2:
                    accumulate(inputs[0], unpool_avg2(g));
                    break;
                case Op::UnpoolAvg2:
                    accumulate(inputs[0], avgpool2(g));
                    break;
            }
        }

        std::vector<NodeId> out;
        out.reserve(wrt.size());
        for (NodeId v : wrt) {
            if (v <= top && adj[size_t(v)] != kNoNode)
                out.push_back(adj[size_t(v)]);
            else
                out.push_back(constant(TensorT<S>(nodes_[size_t(v)].shape, S(0))));
        }
        return out;
    }

    std::vector<NodeId> gradient(NodeId scalar_node, std::initializer_list<NodeId> wrt) {
        std::vector<NodeId> w(wrt);
        return gradient(scalar_node, std::span<const NodeId>(w));
    }

    const NodeT<S>& node(NodeId id) const { return nodes_[size_t(id)]; }
    size_t size() const { return nodes_.size(); }

    const std::string& var_name(NodeId id) const {
        for (const auto& [vid, name] : var_names_)
            if (vid == id) return name;
        static const std::string unknown = "?";
        return unknown;
    }

private:
    NodeId push(NodeT<S> n) {
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size() - 1);
    }

    void require_same_shape(const char* what, NodeId a, NodeId b) const {
        if (nodes_[a].shape != nodes_[b].shape)
            throw ShapeError(std::string(what) + ": " + shape_str(nodes_[a].shape) + " vs " +
                             shape_str(nodes_[b].shape));
    }
    void require_rank2(const char* what, NodeId a) const {
        if (nodes_[a].shape.size() != 2)
            throw ShapeError(std::string(what) + " needs rank 2, got " +
                             shape_str(nodes_[a].shape));
    }
    void require_rank1(const char* what, NodeId a) const {
        if (nodes_[a].shape.size() != 1)
            throw ShapeError(std::string(what) + " needs rank 1, got " +
                             shape_str(nodes_[a].shape));
    }

    std::vector<NodeT<S>> nodes_;
    std::vector<std::pair<NodeId, std::string>> var_names_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

} // namespace od::ad
