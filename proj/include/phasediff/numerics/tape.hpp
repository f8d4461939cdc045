#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "phasediff/error.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/numerics/tensor.hpp"

namespace phasediff {

namespace detail {

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
T stable_softplus(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace detail

/// Handle to a node recorded on a Tape.
struct Var {
    std::uint32_t id = UINT32_MAX;
};

/// Straight-line recording of a computation over one ParamVector.
///
/// Forward values are computed eagerly as ops are recorded. Once recorded,
/// the tape is read-only and supports any number of independent sweeps:
///   - gradient(): reverse mode, seeded by one or more scalar nodes
///   - tangents(): forward mode along a parameter-space direction
/// Both sweeps accumulate in a fixed order, so results are bit-reproducible.
template <class T>
class Tape {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    using MatMap = Eigen::Map<const Mat>;
    using VecMap = Eigen::Map<const Vec>;

    explicit Tape(const ParamVector<T>& params) : params_(&params), param_node_(params.segments().size(), UINT32_MAX) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;

    const ParamVector<T>& params() const noexcept { return *params_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    // ---- leaves ----------------------------------------------------------

    /// Leaf for a parameter segment. Repeated calls return the same node.
    Var param(std::string_view name) {
        const auto idx = params_->index_of(name);
        if (param_node_[idx] != UINT32_MAX) return Var{param_node_[idx]};
        const auto& seg = params_->segments()[idx];
        const auto* src = params_->values().data() + seg.offset;
        Node n{Op::param, seg.rows, seg.cols};
        n.index = idx;
        n.needs_grad = true;
        n.value.assign(src, src + seg.size());
        param_node_[idx] = push(std::move(n));
        return Var{param_node_[idx]};
    }

    Var constant(std::vector<T> values, std::size_t rows, std::size_t cols = 1) {
        if (values.size() != rows * cols)
            throw ShapeError("constant: " + std::to_string(values.size()) + " values for " + dims(rows, cols));
        Node n{Op::constant, rows, cols};
        n.value = std::move(values);
        return Var{push(std::move(n))};
    }
    Var constant(std::span<const T> values) {
        return constant(std::vector<T>(values.begin(), values.end()), values.size(), 1);
    }
    Var constant(const Tensor<T>& t) { return constant(t.values, t.rows(), t.cols()); }
    Var scalar_constant(T v) { return constant(std::vector<T>{v}, 1, 1); }

    // ---- ops -------------------------------------------------------------

    /// W x + b with W (r x c), x (c), b (r).
    Var affine(Var w, Var x, Var b) {
        const auto& W = node(w);
        const auto& X = node(x);
        const auto& B = node(b);
        if (X.cols != 1 || W.cols != X.rows || B.rows != W.rows || B.cols != 1)
            throw ShapeError("affine: W " + dims(W) + ", x " + dims(X) + ", b " + dims(B));
        Node n{Op::affine, W.rows, 1, w.id, x.id, b.id};
        n.value.resize(W.rows);
        Eigen::Map<Vec>(n.value.data(), W.rows) =
            MatMap(W.value.data(), W.rows, W.cols) * VecMap(X.value.data(), X.rows) + VecMap(B.value.data(), B.rows);
        return finish(std::move(n));
    }

    /// W x with W (r x c), x (c).
    Var matvec(Var w, Var x) {
        const auto& W = node(w);
        const auto& X = node(x);
        if (X.cols != 1 || W.cols != X.rows) throw ShapeError("matvec: W " + dims(W) + ", x " + dims(X));
        Node n{Op::matvec, W.rows, 1, w.id, x.id};
        n.value.resize(W.rows);
        Eigen::Map<Vec>(n.value.data(), W.rows) = MatMap(W.value.data(), W.rows, W.cols) * VecMap(X.value.data(), X.rows);
        return finish(std::move(n));
    }

    Var add(Var a, Var b) { return binary(Op::add, "add", a, b, [](T x, T y) { return x + y; }); }
    Var sub(Var a, Var b) { return binary(Op::sub, "sub", a, b, [](T x, T y) { return x - y; }); }
    Var mul(Var a, Var b) { return binary(Op::mul, "mul", a, b, [](T x, T y) { return x * y; }); }

    Var scale(Var a, T k) {
        Node n = unary_shell(Op::scale, a);
        n.scalar = k;
        for (auto& v : n.value) v *= k;
        return finish(std::move(n));
    }
    Var neg(Var a) { return scale(a, T(-1)); }

    Var one_minus(Var a) {
        Node n = unary_shell(Op::one_minus, a);
        for (auto& v : n.value) v = T(1) - v;
        return finish(std::move(n));
    }

    Var sigmoid(Var a) { return map(Op::sigmoid, a, [](T x) { return detail::stable_sigmoid(x); }); }
    Var tanh(Var a) { return map(Op::tanh, a, [](T x) { return std::tanh(x); }); }
    Var softplus(Var a) { return map(Op::softplus, a, [](T x) { return detail::stable_softplus(x); }); }
    Var relu(Var a) { return map(Op::relu, a, [](T x) { return x > T(0) ? x : T(0); }); }

    /// log(max(a, floor)); the derivative is zero where the clamp is active.
    Var log_clamped(Var a, T floor) {
        Node n = unary_shell(Op::log_clamped, a);
        n.scalar = floor;
        for (auto& v : n.value) v = std::log(std::max(v, floor));
        return finish(std::move(n));
    }

    Var softmax(Var a) {
        const auto& A = node(a);
        if (A.cols != 1) throw ShapeError("softmax: expected a vector, got " + dims(A));
        Node n{Op::softmax, A.rows, 1, a.id};
        n.value = A.value;
        const T mx = *std::max_element(n.value.begin(), n.value.end());
        T total = 0;
        for (auto& v : n.value) total += (v = std::exp(v - mx));
        for (auto& v : n.value) v /= total;
        return finish(std::move(n));
    }

    Var concat(Var a, Var b) {
        const auto& A = node(a);
        const auto& B = node(b);
        if (A.cols != 1 || B.cols != 1) throw ShapeError("concat: expected vectors, got " + dims(A) + " and " + dims(B));
        Node n{Op::concat, A.rows + B.rows, 1, a.id, b.id};
        n.value = A.value;
        n.value.insert(n.value.end(), B.value.begin(), B.value.end());
        return finish(std::move(n));
    }

    Var pick(Var a, std::size_t i) {
        const auto& A = node(a);
        if (i >= A.value.size()) throw ShapeError("pick: index " + std::to_string(i) + " outside " + dims(A));
        Node n{Op::pick, 1, 1, a.id};
        n.index = i;
        n.value = {A.value[i]};
        return finish(std::move(n));
    }

    Var sum(Var a) {
        const auto& A = node(a);
        Node n{Op::sum, 1, 1, a.id};
        T s = 0;
        for (T v : A.value) s += v;
        n.value = {s};
        return finish(std::move(n));
    }

    Var sqnorm(Var a) {
        const auto& A = node(a);
        Node n{Op::sqnorm, 1, 1, a.id};
        T s = 0;
        for (T v : A.value) s += v * v;
        n.value = {s};
        return finish(std::move(n));
    }

    /// Σ_i w_i · scalar_i, accumulated left to right.
    Var weighted_sum(std::span<const Var> scalars, std::span<const T> weights) {
        if (scalars.empty() || scalars.size() != weights.size())
            throw ShapeError("weighted_sum: " + std::to_string(scalars.size()) + " terms, " +
                             std::to_string(weights.size()) + " weights");
        Var acc = scale(require_scalar(scalars[0], "weighted_sum"), weights[0]);
        for (std::size_t i = 1; i < scalars.size(); ++i)
            acc = add(acc, scale(require_scalar(scalars[i], "weighted_sum"), weights[i]));
        return acc;
    }

    // ---- inspection ------------------------------------------------------

    std::span<const T> value(Var v) const { return node(v).value; }
    std::size_t rows(Var v) const { return node(v).rows; }
    std::size_t cols(Var v) const { return node(v).cols; }
    T scalar(Var v) const { return node(require_scalar_c(v, "scalar")).value[0]; }
    Tensor<T> tensor(Var v) const {
        const auto& n = node(v);
        if (n.cols == 1) return Tensor<T>({n.rows}, n.value);
        return Tensor<T>({n.rows, n.cols}, n.value);
    }

    // ---- sweeps ----------------------------------------------------------

    /// Reverse sweep: gradient of Σ_k weights[k]·losses[k] w.r.t. the params.
    std::vector<T> gradient(std::span<const Var> losses, std::span<const T> weights) const {
        if (losses.size() != weights.size())
            throw ShapeError("gradient: " + std::to_string(losses.size()) + " seeds, " +
                             std::to_string(weights.size()) + " weights");
        std::vector<std::vector<T>> adj(nodes_.size());
        std::uint32_t top = 0;
        for (std::size_t k = 0; k < losses.size(); ++k) {
            const auto id = require_scalar_c(losses[k], "gradient").id;
            if (!nodes_[id].needs_grad) continue;
            auto& a = adj[id];
            if (a.empty()) a.assign(1, T(0));
            a[0] += weights[k];
            top = std::max(top, id + 1);
        }
        for (std::uint32_t id = top; id-- > 0;) {
            if (adj[id].empty()) continue;
            backprop(id, adj);
        }
        std::vector<T> grad(params_->size(), T(0));
        for (std::size_t s = 0; s < param_node_.size(); ++s) {
            const auto id = param_node_[s];
            if (id == UINT32_MAX || adj[id].empty()) continue;
            const auto off = params_->segments()[s].offset;
            for (std::size_t i = 0; i < adj[id].size(); ++i) grad[off + i] += adj[id][i];
        }
        return grad;
    }

    std::vector<T> gradient(Var loss) const {
        const T one = 1;
        return gradient(std::span<const Var>(&loss, 1), std::span<const T>(&one, 1));
    }

    /// Forward sweep: returns the tangent of each requested node when the
    /// parameters move along `direction` (a ParamVector-shaped vector).
    /// For scalar outputs this is the directional derivative d·∇out.
    std::vector<std::vector<T>> tangents(std::span<const T> direction, std::span<const Var> outputs) const {
        if (direction.size() != params_->size())
            throw ShapeError("tangents: direction has " + std::to_string(direction.size()) +
                             " entries, params have " + std::to_string(params_->size()));
        std::uint32_t top = 0;
        for (auto v : outputs) top = std::max(top, node(v).self + 1);
        std::vector<std::vector<T>> tan(top);
        for (std::uint32_t id = 0; id < top; ++id) {
            if (!nodes_[id].needs_grad) continue;
            forward_tangent(id, direction, tan);
        }
        std::vector<std::vector<T>> out;
        out.reserve(outputs.size());
        for (auto v : outputs) {
            const auto& t = tan[v.id];
            out.push_back(t.empty() ? std::vector<T>(node(v).value.size(), T(0)) : t);
        }
        return out;
    }

private:
    enum class Op : std::uint8_t {
        param, constant, affine, matvec, add, sub, mul, scale, one_minus,
        sigmoid, tanh, softplus, relu, log_clamped, softmax, concat, pick, sum, sqnorm
    };

    struct Node {
        Op op;
        std::size_t rows = 0;
        std::size_t cols = 1;
        std::uint32_t a = UINT32_MAX, b = UINT32_MAX, c = UINT32_MAX;
        std::uint32_t self = UINT32_MAX;
        std::size_t index = 0;
        T scalar = 0;
        bool needs_grad = false;
        std::vector<T> value{};
    };

    const ParamVector<T>* params_;
    std::vector<std::uint32_t> param_node_;
    std::vector<Node> nodes_;

    static std::string dims(std::size_t r, std::size_t c) { return "[" + std::to_string(r) + "x" + std::to_string(c) + "]"; }
    static std::string dims(const Node& n) { return dims(n.rows, n.cols); }

    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw ShapeError("tape: invalid variable handle");
        return nodes_[v.id];
    }

    Var require_scalar(Var v, const char* op) const { return require_scalar_c(v, op); }
    Var require_scalar_c(Var v, const char* op) const {
        const auto& n = node(v);
        if (n.value.size() != 1) throw ShapeError(std::string(op) + ": expected a scalar node, got " + dims(n));
        return v;
    }

    std::uint32_t push(Node n) {
        n.self = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back(std::move(n));
        return nodes_.back().self;
    }

    Var finish(Node n) {
        auto flag = [&](std::uint32_t i) { return i != UINT32_MAX && nodes_[i].needs_grad; };
        n.needs_grad = flag(n.a) || flag(n.b) || flag(n.c);
        return Var{push(std::move(n))};
    }

    Node unary_shell(Op op, Var a) {
        const auto& A = node(a);
        Node n{op, A.rows, A.cols, a.id};
        n.value = A.value;
        return n;
    }

    template <class F>
    Var map(Op op, Var a, F f) {
        Node n = unary_shell(op, a);
        for (auto& v : n.value) v = f(v);
        return finish(std::move(n));
    }

    template <class F>
    Var binary(Op op, const char* name, Var a, Var b, F f) {
        const auto& A = node(a);
        const auto& B = node(b);
        if (A.rows != B.rows || A.cols != B.cols)
            throw ShapeError(std::string(name) + ": shapes " + dims(A) + " and " + dims(B) + " differ");
        Node n{op, A.rows, A.cols, a.id, b.id};
        n.value.resize(A.value.size());
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = f(A.value[i], B.value[i]);
        return finish(std::move(n));
    }

    static std::vector<T>& slot(std::vector<std::vector<T>>& buf, const Node& n) {
        auto& s = buf[n.self];
        if (s.empty()) s.assign(n.value.size(), T(0));
        return s;
    }

    bool live(std::uint32_t i) const { return i != UINT32_MAX && nodes_[i].needs_grad; }

    void backprop(std::uint32_t id, std::vector<std::vector<T>>& adj) const {
        const Node& n = nodes_[id];
        const std::vector<T>& g = adj[id];
        const std::size_t len = g.size();
        switch (n.op) {
        case Op::param:
        case Op::constant:
            return;
        case Op::affine:
        case Op::matvec: {
            const Node& W = nodes_[n.a];
            const Node& X = nodes_[n.b];
            const VecMap gv(g.data(), len);
            if (live(n.a)) {
                auto& dw = slot(adj, W);
                Eigen::Map<Mat>(dw.data(), W.rows, W.cols).noalias() += gv * VecMap(X.value.data(), X.rows).transpose();
            }
            if (live(n.b)) {
                auto& dx = slot(adj, X);
                Eigen::Map<Vec>(dx.data(), X.rows).noalias() += MatMap(W.value.data(), W.rows, W.cols).transpose() * gv;
            }
            if (n.op == Op::affine && live(n.c)) {
                auto& db = slot(adj, nodes_[n.c]);
                for (std::size_t i = 0; i < len; ++i) db[i] += g[i];
            }
            return;
        }
        case Op::add:
        case Op::sub: {
            if (live(n.a)) {
                auto& da = slot(adj, nodes_[n.a]);
                for (std::size_t i = 0; i < len; ++i) da[i] += g[i];
            }
            if (live(n.b)) {
                auto& db = slot(adj, nodes_[n.b]);
                if (n.op == Op::add)
                    for (std::size_t i = 0; i < len; ++i) db[i] += g[i];
                else
                    for (std::size_t i = 0; i < len; ++i) db[i] -= g[i];
            }
            return;
        }
        case Op::mul: {
            const auto& A = nodes_[n.a].value;
            const auto& B = nodes_[n.b].value;
            if (live(n.a)) {
                auto& da = slot(adj, nodes_[n.a]);
                for (std::size_t i = 0; i < len; ++i) da[i] += g[i] * B[i];
            }
            if (live(n.b)) {
                auto& db = slot(adj, nodes_[n.b]);
                for (std::size_t i = 0; i < len; ++i) db[i] += g[i] * A[i];
            }
            return;
        }
        case Op::concat: {
            const std::size_t ra = nodes_[n.a].rows;
            if (live(n.a)) {
                auto& da = slot(adj, nodes_[n.a]);
                for (std::size_t i = 0; i < ra; ++i) da[i] += g[i];
            }
            if (live(n.b)) {
                auto& db = slot(adj, nodes_[n.b]);
                for (std::size_t i = ra; i < len; ++i) db[i - ra] += g[i];
            }
            return;
        }
        default:
            break;
        }
        // Remaining ops have a single input.
        if (!live(n.a)) return;
        const Node& A = nodes_[n.a];
        auto& da = slot(adj, A);
        switch (n.op) {
        case Op::scale:
            for (std::size_t i = 0; i < len; ++i) da[i] += g[i] * n.scalar;
            break;
        case Op::one_minus:
            for (std::size_t i = 0; i < len; ++i) da[i] -= g[i];
            break;
        case Op::sigmoid:
            for (std::size_t i = 0; i < len; ++i) da[i] += g[i] * n.value[i] * (T(1) - n.value[i]);
            break;
        case Op::tanh:
            for (std::size_t i = 0; i < len; ++i) da[i] += g[i] * (T(1) - n.value[i] * n.value[i]);
            break;
        case Op::softplus:
            for (std::size_t i = 0; i < len; ++i) da[i] += g[i] * detail::stable_sigmoid(A.value[i]);
            break;
        case Op::relu:
            for (std::size_t i = 0; i < len; ++i)
                if (A.value[i] > T(0)) da[i] += g[i];
            break;
        case Op::log_clamped:
            for (std::size_t i = 0; i < len; ++i)
                if (A.value[i] >= n.scalar) da[i] += g[i] / A.value[i];
            break;
        case Op::softmax: {
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i) dot += g[i] * n.value[i];
            for (std::size_t i = 0; i < len; ++i) da[i] += n.value[i] * (g[i] - dot);
            break;
        }
        case Op::pick:
            da[n.index] += g[0];
            break;
        case Op::sum:
            for (auto& v : da) v += g[0];
            break;
        case Op::sqnorm:
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += T(2) * g[0] * A.value[i];
            break;
        default:
            break;
        }
    }

    void forward_tangent(std::uint32_t id, std::span<const T> dir, std::vector<std::vector<T>>& tan) const {
        const Node& n = nodes_[id];
        const std::size_t len = n.value.size();
        auto in = [&](std::uint32_t i) -> const std::vector<T>* {
            if (i == UINT32_MAX || tan[i].empty()) return nullptr;
            return &tan[i];
        };
        auto& out = tan[id];
        switch (n.op) {
        case Op::constant:
            return;
        case Op::param: {
            const auto off = params_->segments()[n.index].offset;
            out.assign(dir.begin() + off, dir.begin() + off + len);
            return;
        }
        case Op::affine:
        case Op::matvec: {
            const Node& W = nodes_[n.a];
            const Node& X = nodes_[n.b];
            out.assign(len, T(0));
            Eigen::Map<Vec> o(out.data(), len);
            if (auto tw = in(n.a)) o.noalias() += MatMap(tw->data(), W.rows, W.cols) * VecMap(X.value.data(), X.rows);
            if (auto tx = in(n.b)) o.noalias() += MatMap(W.value.data(), W.rows, W.cols) * VecMap(tx->data(), X.rows);
            if (n.op == Op::affine)
                if (auto tb = in(n.c)) o += VecMap(tb->data(), len);
            return;
        }
        case Op::add:
        case Op::sub:
        case Op::mul: {
            const auto* ta = in(n.a);
            const auto* tb = in(n.b);
            if (!ta && !tb) return;
            out.assign(len, T(0));
            const auto& A = nodes_[n.a].value;
            const auto& B = nodes_[n.b].value;
            for (std::size_t i = 0; i < len; ++i) {
                const T da = ta ? (*ta)[i] : T(0);
                const T db = tb ? (*tb)[i] : T(0);
                if (n.op == Op::add) out[i] = da + db;
                else if (n.op == Op::sub) out[i] = da - db;
                else out[i] = da * B[i] + A[i] * db;
            }
            return;
        }
        case Op::concat: {
            const auto* ta = in(n.a);
            const auto* tb = in(n.b);
            if (!ta && !tb) return;
            out.assign(len, T(0));
            const std::size_t ra = nodes_[n.a].rows;
            if (ta) std::copy(ta->begin(), ta->end(), out.begin());
            if (tb) std::copy(tb->begin(), tb->end(), out.begin() + ra);
            return;
        }
        default:
            break;
        }
        const auto* ta = in(n.a);
        if (!ta) return;
        const auto& t = *ta;
        const Node& A = nodes_[n.a];
        out.assign(len, T(0));
        switch (n.op) {
        case Op::scale:
            for (std::size_t i = 0; i < len; ++i) out[i] = n.scalar * t[i];
            break;
        case Op::one_minus:
            for (std::size_t i = 0; i < len; ++i) out[i] = -t[i];
            break;
        case Op::sigmoid:
            for (std::size_t i = 0; i < len; ++i) out[i] = n.value[i] * (T(1) - n.value[i]) * t[i];
            break;
        case Op::tanh:
            for (std::size_t i = 0; i < len; ++i) out[i] = (T(1) - n.value[i] * n.value[i]) * t[i];
            break;
        case Op::softplus:
            for (std::size_t i = 0; i < len; ++i) out[i] = detail::stable_sigmoid(A.value[i]) * t[i];
            break;
        case Op::relu:
            for (std::size_t i = 0; i < len; ++i) out[i] = A.value[i] > T(0) ? t[i] : T(0);
            break;
        case Op::log_clamped:
            for (std::size_t i = 0; i < len; ++i) out[i] = A.value[i] >= n.scalar ? t[i] / A.value[i] : T(0);
            break;
        case Op::softmax: {
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i) dot += n.value[i] * t[i];
            for (std::size_t i = 0; i < len; ++i) out[i] = n.value[i] * (t[i] - dot);
            break;
        }
        case Op::pick:
            out[0] = t[n.index];
            break;
        case Op::sum:
            for (T v : t) out[0] += v;
            break;
        case Op::sqnorm:
            for (std::size_t i = 0; i < t.size(); ++i) out[0] += T(2) * A.value[i] * t[i];
            break;
        default:
            break;
        }
    }
};

} // namespace phasediff
