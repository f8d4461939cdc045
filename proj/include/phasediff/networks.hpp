#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "phasediff/error.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/numerics/rng.hpp"
#include "phasediff/numerics/tape.hpp"
#include "phasediff/numerics/tensor.hpp"

namespace phasediff {

/// Probability floor applied before the log in cross_entropy.
inline constexpr double kLogFloor = 1e-12;

/// Sizes of the three networks.
struct NetworkDims {
    std::size_t features = 0;       // D
    std::size_t hidden = 512;       // recurrent state width
    std::size_t classes = 0;        // C
    std::size_t width = 512;        // noise-predictor layer width
    std::size_t weight_hidden = 100;
    int steps = 1000;               // T, used to normalise the timestep input

    void validate() const {
        if (features == 0 || hidden == 0 || classes < 2 || width == 0 || weight_hidden == 0 || steps < 1)
            throw ConfigError("network dims: features, hidden, width and weight_hidden must be positive, classes >= 2");
    }
    bool operator==(const NetworkDims&) const = default;
};

namespace seg {
// Condition encoder: gated recurrent cell + softmax projector.
inline constexpr const char* enc_wr = "enc.wr";
inline constexpr const char* enc_ur = "enc.ur";
inline constexpr const char* enc_br = "enc.br";
inline constexpr const char* enc_wu = "enc.wu";
inline constexpr const char* enc_uu = "enc.uu";
inline constexpr const char* enc_bu = "enc.bu";
inline constexpr const char* enc_wn = "enc.wn";
inline constexpr const char* enc_un = "enc.un";
inline constexpr const char* enc_bn = "enc.bn";
inline constexpr const char* proj_w = "proj.w";
inline constexpr const char* proj_b = "proj.b";
// Noise predictor.
inline constexpr const char* np_l1_w = "np.l1.w";
inline constexpr const char* np_l1_b = "np.l1.b";
inline constexpr const char* np_temb_w = "np.temb.w";
inline constexpr const char* np_temb_b = "np.temb.b";
inline constexpr const char* np_l2_w = "np.l2.w";
inline constexpr const char* np_l2_b = "np.l2.b";
inline constexpr const char* np_l3_w = "np.l3.w";
inline constexpr const char* np_l3_b = "np.l3.b";
inline constexpr const char* np_out_w = "np.out.w";
inline constexpr const char* np_out_b = "np.out.b";
// Meta-weight net.
inline constexpr const char* mw_l1_w = "mw.l1.w";
inline constexpr const char* mw_l1_b = "mw.l1.b";
inline constexpr const char* mw_l2_w = "mw.l2.w";
inline constexpr const char* mw_l2_b = "mw.l2.b";
} // namespace seg

namespace detail {

template <class T>
void init_uniform(ParamVector<T>& p, const char* name, std::uint64_t seed) {
    const auto& s = p.segment(name);
    const double bound = 1.0 / std::sqrt(double(s.cols));
    CounterRng rng(stream_key(seed, {std::hash<std::string>{}(s.name)}));
    for (auto& v : p.slice(name)) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

} // namespace detail

/// Layout of Θ: encoder (enc.*, proj.*) followed by the noise predictor (np.*).
/// Weights ~ U(±1/√fan_in), biases 0.
template <class T>
ParamVector<T> make_model_params(const NetworkDims& d, std::uint64_t seed) {
    d.validate();
    ParamVector<T> p;
    const auto H = d.hidden, D = d.features, C = d.classes, W = d.width;
    for (auto [w, u, b] : {std::tuple{seg::enc_wr, seg::enc_ur, seg::enc_br},
                           std::tuple{seg::enc_wu, seg::enc_uu, seg::enc_bu},
                           std::tuple{seg::enc_wn, seg::enc_un, seg::enc_bn}}) {
        p.add(w, H, D);
        p.add(u, H, H);
        p.add(b, H);
    }
    p.add(seg::proj_w, C, H);
    p.add(seg::proj_b, C);
    p.add(seg::np_l1_w, W, 2 * C);
    p.add(seg::np_l1_b, W);
    p.add(seg::np_temb_w, W, 1);
    p.add(seg::np_temb_b, W);
    p.add(seg::np_l2_w, W, W);
    p.add(seg::np_l2_b, W);
    p.add(seg::np_l3_w, W, W);
    p.add(seg::np_l3_b, W);
    p.add(seg::np_out_w, C, W);
    p.add(seg::np_out_b, C);
    for (const auto* name : {seg::enc_wr, seg::enc_ur, seg::enc_wu, seg::enc_uu, seg::enc_wn, seg::enc_un, seg::proj_w,
                             seg::np_l1_w, seg::np_temb_w, seg::np_l2_w, seg::np_l3_w, seg::np_out_w})
        detail::init_uniform(p, name, seed);
    return p;
}

template <class T>
ParamVector<T> make_weight_net_params(const NetworkDims& d, std::uint64_t seed) {
    d.validate();
    ParamVector<T> p;
    p.add(seg::mw_l1_w, d.weight_hidden, 1);
    p.add(seg::mw_l1_b, d.weight_hidden);
    p.add(seg::mw_l2_w, 1, d.weight_hidden);
    p.add(seg::mw_l2_b, 1);
    detail::init_uniform(p, seg::mw_l1_w, seed);
    detail::init_uniform(p, seg::mw_l2_w, seed);
    return p;
}

/// True when a segment belongs to the condition encoder (enc.* / proj.*).
inline bool is_encoder_segment(const std::string& name) {
    return name.rfind("enc.", 0) == 0 || name.rfind("proj.", 0) == 0;
}

// ---------------------------------------------------------------------------
// Differentiable (tape) definitions
// ---------------------------------------------------------------------------

/// One step of the gated recurrent cell:
///   r  = σ(Wr x + Ur h + br)
///   u  = σ(Wu x + Uu h + bu)
///   n  = tanh(Wn x + r ⊙ (Un h) + bn)
///   h' = (1 − u) ⊙ n + u ⊙ h
template <class T>
Var encoder_step(Tape<T>& tp, Var h, Var x) {
    auto gate = [&](const char* w, const char* u, const char* b) {
        return tp.sigmoid(tp.add(tp.affine(tp.param(w), x, tp.param(b)), tp.matvec(tp.param(u), h)));
    };
    const Var r = gate(seg::enc_wr, seg::enc_ur, seg::enc_br);
    const Var u = gate(seg::enc_wu, seg::enc_uu, seg::enc_bu);
    const Var cand = tp.tanh(tp.add(tp.affine(tp.param(seg::enc_wn), x, tp.param(seg::enc_bn)),
                                    tp.mul(r, tp.matvec(tp.param(seg::enc_un), h))));
    return tp.add(tp.mul(tp.one_minus(u), cand), tp.mul(u, h));
}

template <class T>
Var encoder_project(Tape<T>& tp, Var h) {
    return tp.softmax(tp.affine(tp.param(seg::proj_w), h, tp.param(seg::proj_b)));
}

/// Runs the encoder over `rows` frames of `features` (row-major, rows x D)
/// starting from state `h0`, and returns one simplex node per frame.
template <class T>
std::vector<Var> encode_on_tape(Tape<T>& tp, std::span<const T> features, std::size_t rows, std::span<const T> h0) {
    const auto D = tp.params().segment(seg::enc_wr).cols;
    if (features.size() != rows * D)
        throw ShapeError("encode: features hold " + std::to_string(features.size()) + " values, expected " +
                         std::to_string(rows) + "x" + std::to_string(D));
    Var h = tp.constant(h0);
    std::vector<Var> z;
    z.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const Var x = tp.constant(features.subspan(i * D, D));
        h = encoder_step(tp, h, x);
        z.push_back(encoder_project(tp, h));
    }
    return z;
}

/// ε(y_t, z, t): softplus((A1[y_t; z] + b1) ⊙ (a·t/T + c)), two more
/// softplus layers, then a linear read-out to C.
template <class T>
Var noise_on_tape(Tape<T>& tp, Var y_t, Var z, int t, int steps) {
    const Var in = tp.concat(y_t, z);
    const Var temb = tp.affine(tp.param(seg::np_temb_w), tp.scalar_constant(T(t) / T(steps)), tp.param(seg::np_temb_b));
    Var h = tp.softplus(tp.mul(tp.affine(tp.param(seg::np_l1_w), in, tp.param(seg::np_l1_b)), temb));
    h = tp.softplus(tp.affine(tp.param(seg::np_l2_w), h, tp.param(seg::np_l2_b)));
    h = tp.softplus(tp.affine(tp.param(seg::np_l3_w), h, tp.param(seg::np_l3_b)));
    return tp.affine(tp.param(seg::np_out_w), h, tp.param(seg::np_out_b));
}

/// h(loss; w) = σ(w2 · relu(w1·loss + b1) + b2).
template <class T>
Var weight_on_tape(Tape<T>& tp, Var loss) {
    const Var h = tp.relu(tp.affine(tp.param(seg::mw_l1_w), loss, tp.param(seg::mw_l1_b)));
    return tp.sigmoid(tp.affine(tp.param(seg::mw_l2_w), h, tp.param(seg::mw_l2_b)));
}

template <class T>
Var cross_entropy_on_tape(Tape<T>& tp, Var z, std::size_t label) {
    if (label >= tp.rows(z))
        throw RangeError("cross_entropy: label " + std::to_string(label) + " >= class count " + std::to_string(tp.rows(z)));
    return tp.neg(tp.log_clamped(tp.pick(z, label), T(kLogFloor)));
}

// ---------------------------------------------------------------------------
// Plain evaluation paths (no tape), used for inference and state warm-up.
// They implement the same equations as the tape definitions above.
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
Eigen::Map<const RowMat<T>> mat(const ParamVector<T>& p, const char* name) {
    const auto& s = p.segment(name);
    return {p.values().data() + s.offset, Eigen::Index(s.rows), Eigen::Index(s.cols)};
}
template <class T>
Eigen::Map<const ColVec<T>> vec(const ParamVector<T>& p, const char* name) {
    const auto& s = p.segment(name);
    return {p.values().data() + s.offset, Eigen::Index(s.size())};
}
} // namespace detail

/// Causal recurrent encoder over precomputed frame features.
template <class T>
class ConditionEncoder {
public:
    ConditionEncoder(const ParamVector<T>& theta) : p_(&theta) {
        features_ = theta.segment(seg::enc_wr).cols;
        hidden_ = theta.segment(seg::enc_wr).rows;
        classes_ = theta.segment(seg::proj_w).rows;
    }

    std::size_t features() const noexcept { return features_; }
    std::size_t hidden() const noexcept { return hidden_; }
    std::size_t classes() const noexcept { return classes_; }

    std::vector<T> initial_state() const { return std::vector<T>(hidden_, T(0)); }

    /// Advances `h` in place by one frame.
    void step(std::vector<T>& h, std::span<const T> x) const {
        using detail::mat;
        using detail::vec;
        using V = detail::ColVec<T>;
        if (x.size() != features_)
            throw ShapeError("encoder step: frame has " + std::to_string(x.size()) + " features, expected " +
                             std::to_string(features_));
        const Eigen::Map<const V> xv(x.data(), Eigen::Index(x.size()));
        const Eigen::Map<const V> hv(h.data(), Eigen::Index(h.size()));
        auto sig = [](T v) { return detail::stable_sigmoid(v); };
        const V r = (mat(*p_, seg::enc_wr) * xv + vec(*p_, seg::enc_br) + mat(*p_, seg::enc_ur) * hv).unaryExpr(sig);
        const V u = (mat(*p_, seg::enc_wu) * xv + vec(*p_, seg::enc_bu) + mat(*p_, seg::enc_uu) * hv).unaryExpr(sig);
        const V un = mat(*p_, seg::enc_un) * hv;
        const V n = (mat(*p_, seg::enc_wn) * xv + vec(*p_, seg::enc_bn) + r.cwiseProduct(un)).array().tanh().matrix();
        V next(hidden_);
        for (std::size_t i = 0; i < hidden_; ++i) next[i] = (T(1) - u[i]) * n[i] + u[i] * hv[i];
        std::copy(next.data(), next.data() + hidden_, h.begin());
    }

    std::vector<T> project(std::span<const T> h) const {
        using V = detail::ColVec<T>;
        const Eigen::Map<const V> hv(h.data(), Eigen::Index(h.size()));
        V logits = detail::mat(*p_, seg::proj_w) * hv + detail::vec(*p_, seg::proj_b);
        const T mx = logits.maxCoeff();
        std::vector<T> z(classes_);
        T total = 0;
        for (std::size_t c = 0; c < classes_; ++c) total += (z[c] = std::exp(logits[c] - mx));
        for (auto& v : z) v /= total;
        return z;
    }

private:
    const ParamVector<T>* p_;
    std::size_t features_ = 0, hidden_ = 0, classes_ = 0;
};

/// z^1..z^L for an L x D feature matrix; row i depends on rows 1..i only.
template <class T>
Tensor<T> encode_sequence(const ConditionEncoder<T>& enc, const Tensor<T>& features) {
    if (features.rank() != 2 || features.cols() != enc.features())
        throw ShapeError("encode_sequence: features " + Tensor<T>::shape_string(features.shape) + ", encoder expects Lx" +
                         std::to_string(enc.features()));
    if (features.rows() == 0) throw ShapeError("encode_sequence: empty sequence");
    const auto L = features.rows(), D = features.cols(), C = enc.classes();
    Tensor<T> z = Tensor<T>::zeros({L, C});
    auto h = enc.initial_state();
    for (std::size_t i = 0; i < L; ++i) {
        enc.step(h, std::span<const T>(features.values).subspan(i * D, D));
        const auto zi = enc.project(h);
        std::copy(zi.begin(), zi.end(), z.values.begin() + long(i * C));
    }
    return z;
}

/// ε_Θ(y_t, z, t).
template <class T>
class NoisePredictor {
public:
    NoisePredictor(const ParamVector<T>& theta, int steps) : p_(&theta), steps_(steps) {
        classes_ = theta.segment(seg::np_out_w).rows;
        width_ = theta.segment(seg::np_out_w).cols;
    }

    std::size_t classes() const noexcept { return classes_; }
    int steps() const noexcept { return steps_; }

    /// Predictions for m noisy label rows at once: Y is m x C (row-major),
    /// all rows sharing z and t. Returns m x C.
    detail::RowMat<T> predict_rows(const detail::RowMat<T>& Y, std::span<const T> z, int t) const {
        using detail::mat;
        using detail::vec;
        if (Y.cols() != Eigen::Index(classes_) || z.size() != classes_)
            throw ShapeError("predict_noise: expected C=" + std::to_string(classes_) + " columns");
        if (t < 1 || t > steps_) throw RangeError("predict_noise: t=" + std::to_string(t) + " outside [1, T]");
        const auto m = Y.rows();
        const auto C = Eigen::Index(classes_);
        const auto& l1 = mat(*p_, seg::np_l1_w); // W x 2C
        const detail::ColVec<T> temb =
            mat(*p_, seg::np_temb_w) * (detail::ColVec<T>(1) << T(t) / T(steps_)).finished() + vec(*p_, seg::np_temb_b);
        const Eigen::Map<const detail::ColVec<T>> zv(z.data(), C);
        // The z half of the first layer is shared by every row.
        const detail::ColVec<T> zpart = l1.rightCols(C) * zv + vec(*p_, seg::np_l1_b);
        detail::RowMat<T> h = Y * l1.leftCols(C).transpose();
        h.rowwise() += zpart.transpose();
        h = h.array().rowwise() * temb.transpose().array();
        h = h.unaryExpr([](T v) { return detail::stable_softplus(v); });
        h = ((h * mat(*p_, seg::np_l2_w).transpose()).rowwise() + vec(*p_, seg::np_l2_b).transpose())
                .unaryExpr([](T v) { return detail::stable_softplus(v); });
        h = ((h * mat(*p_, seg::np_l3_w).transpose()).rowwise() + vec(*p_, seg::np_l3_b).transpose())
                .unaryExpr([](T v) { return detail::stable_softplus(v); });
        detail::RowMat<T> out = h * mat(*p_, seg::np_out_w).transpose();
        out.rowwise() += vec(*p_, seg::np_out_b).transpose();
        (void)m;
        return out;
    }

private:
    const ParamVector<T>* p_;
    int steps_;
    std::size_t classes_ = 0, width_ = 0;
};

template <class T>
std::vector<T> predict_noise(const NoisePredictor<T>& np, std::span<const T> y_t, std::span<const T> z, int t) {
    if (y_t.size() != np.classes())
        throw ShapeError("predict_noise: y_t has " + std::to_string(y_t.size()) + " entries, expected " +
                         std::to_string(np.classes()));
    detail::RowMat<T> Y(1, Eigen::Index(y_t.size()));
    for (std::size_t c = 0; c < y_t.size(); ++c) Y(0, Eigen::Index(c)) = y_t[c];
    const auto out = np.predict_rows(Y, z, t);
    return std::vector<T>(out.data(), out.data() + out.size());
}

/// h(·; w): per-frame loss → weight in (0, 1).
template <class T>
class MetaWeightNet {
public:
    explicit MetaWeightNet(const ParamVector<T>& w) : p_(&w) {}

    T weight(T loss) const {
        if (!std::isfinite(double(loss))) throw NumericError("frame_weight: non-finite loss");
        const auto w1 = detail::vec(*p_, seg::mw_l1_w);
        const auto b1 = detail::vec(*p_, seg::mw_l1_b);
        const auto w2 = detail::vec(*p_, seg::mw_l2_w);
        T acc = p_->slice(seg::mw_l2_b)[0];
        for (Eigen::Index i = 0; i < w1.size(); ++i) acc += w2[i] * std::max(T(0), w1[i] * loss + b1[i]);
        return detail::stable_sigmoid(acc);
    }

private:
    const ParamVector<T>* p_;
};

template <class T>
T frame_weight(const MetaWeightNet<T>& mw, T loss) {
    return mw.weight(loss);
}

/// −log z[label] with z clamped below at kLogFloor.
template <class T>
T cross_entropy(std::span<const T> z, std::size_t label) {
    if (label >= z.size())
        throw RangeError("cross_entropy: label " + std::to_string(label) + " >= class count " + std::to_string(z.size()));
    return -std::log(std::max(z[label], T(kLogFloor)));
}

} // namespace phasediff
