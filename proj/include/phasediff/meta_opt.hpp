#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <type_traits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasediff/data.hpp"
#include "phasediff/diffusion.hpp"
#include "phasediff/error.hpp"
#include "phasediff/networks.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/numerics/rng.hpp"
#include "phasediff/numerics/tape.hpp"
#include "phasediff/schedule.hpp"

namespace phasediff {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct TrainerConfig {
    double alpha = 1e-5;            // Θ step size
    double beta = 1e-3;             // w step size
    std::size_t window = 256;       // frames per training window (n ≤ window)
    std::size_t meta_batch = 14;    // m
    std::size_t meta_context = 16;  // frames of recurrence each meta frame runs through
    std::size_t meta_quota = 64;    // frames per class in the meta set
    bool use_cdm = true;
    bool use_mlo = true;
    OptimizerKind optimizer = OptimizerKind::adam;
    OptimizerKind meta_optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t pretrain_steps = 0; // cross-entropy-only encoder steps before the joint phase
    std::size_t steps = 100;        // joint steps
    double divergence = 1e6;
    std::uint64_t seed = 0;
    std::optional<double> fixed_weight; // freezes h to a constant (bypasses the weight net)

    void validate() const {
        if (!(alpha > 0) || !(beta > 0)) throw ConfigError("trainer: alpha and beta must be > 0");
        if (window == 0 || meta_batch == 0 || meta_context == 0 || meta_quota == 0)
            throw ConfigError("trainer: window, meta_batch, meta_context and meta_quota must be >= 1");
        if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
            throw ConfigError("trainer: adam moments must lie in [0,1), eps > 0");
        if (!(divergence > 0)) throw ConfigError("trainer: divergence threshold must be > 0");
        if (fixed_weight && !std::isfinite(*fixed_weight)) throw ConfigError("trainer: fixed_weight must be finite");
    }
};

template <class T>
struct AdamState {
    std::vector<T> m, v;
    std::uint64_t t = 0;
    bool operator==(const AdamState&) const = default;
};

/// x ← x − lr·grad (sgd), or a bias-corrected Adam step.
template <class T>
void optimizer_step(OptimizerKind kind, std::vector<T>& x, std::span<const T> grad, double lr, AdamState<T>& st,
                    const TrainerConfig& cfg) {
    if (grad.size() != x.size()) throw ShapeError("optimizer_step: gradient/parameter length mismatch");
    if (kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= T(lr) * grad[i];
        return;
    }
    if (st.m.empty()) {
        st.m.assign(x.size(), T(0));
        st.v.assign(x.size(), T(0));
    }
    ++st.t;
    const T b1 = T(cfg.adam_beta1), b2 = T(cfg.adam_beta2);
    const T c1 = T(1) - T(std::pow(cfg.adam_beta1, double(st.t)));
    const T c2 = T(1) - T(std::pow(cfg.adam_beta2, double(st.t)));
    for (std::size_t i = 0; i < x.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (T(1) - b1) * grad[i];
        st.v[i] = b2 * st.v[i] + (T(1) - b2) * grad[i] * grad[i];
        x[i] -= T(lr) * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + T(cfg.adam_eps));
    }
}

template <class T>
struct ModelState {
    ParamVector<T> theta;
    ParamVector<T> w;
    AdamState<T> theta_opt;
    AdamState<T> w_opt;
    std::uint64_t step = 0;
    bool operator==(const ModelState&) const = default;
};

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// A run of consecutive frames with its entry state and per-frame draws.
template <class T>
struct FrameWindow {
    std::size_t rows = 0;
    std::vector<T> features;          // rows x D
    std::vector<T> h0;                // encoder state before the first row
    std::vector<int> labels;          // kMasked rows feed the recurrence only
    std::vector<int> timesteps;       // t per row
    std::vector<std::vector<T>> eps;  // ε per row
};

/// Meta frames: each is the last row of its own short window.
template <class T>
struct MetaBatch {
    std::vector<FrameWindow<T>> frames;
};

namespace detail {
enum : std::uint64_t { kWindowTag = 0x57u, kMetaTag = 0x4Du, kDrawTag = 0x44u, kSampleTag = 0x53u };

/// Encoder state after `count` frames of `video`, run at the given Θ.
template <class T>
std::vector<T> prefix_state(const ConditionEncoder<T>& enc, const PhaseSequence& video, std::size_t count) {
    auto h = enc.initial_state();
    std::vector<T> x(video.features);
    for (std::size_t f = 0; f < count; ++f) {
        const auto fr = video.frame(f);
        std::copy(fr.begin(), fr.end(), x.begin());
        enc.step(h, std::span<const T>(x));
    }
    return h;
}

template <class T>
FrameWindow<T> cut_window(const ConditionEncoder<T>& enc, const PhaseSequence& video, std::size_t begin,
                          std::size_t rows, int steps, std::uint64_t key) {
    FrameWindow<T> w;
    w.rows = rows;
    w.h0 = prefix_state(enc, video, begin);
    const auto C = enc.classes();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto fr = video.frame(begin + r);
        w.features.insert(w.features.end(), fr.begin(), fr.end());
        w.labels.push_back(video.labels[begin + r]);
        CounterRng rng(stream_key(key, {kDrawTag, r}));
        w.timesteps.push_back(int(rng.uniform_int(1, std::uint64_t(steps))));
        std::vector<T> e(C);
        for (auto& v : e) v = T(rng.normal());
        w.eps.push_back(std::move(e));
    }
    return w;
}
} // namespace detail

/// Training window for `step`: a random video of the train split and a
/// random start; the entry state comes from the prefix at the current Θ.
template <class T>
FrameWindow<T> draw_window(const Dataset& train, const ParamVector<T>& theta, const TrainerConfig& cfg, int steps,
                           std::uint64_t step) {
    if (train.videos.empty()) throw DataError("draw_window: training split is empty");
    CounterRng rng(stream_key(cfg.seed, {detail::kWindowTag, step}));
    const auto& video = train.videos[rng.uniform_int(0, train.videos.size() - 1)];
    const auto rows = std::min(cfg.window, video.length());
    const auto begin = video.length() > rows ? rng.uniform_int(0, video.length() - rows) : 0;
    return detail::cut_window(ConditionEncoder<T>(theta), video, begin, rows, steps,
                              stream_key(cfg.seed, {detail::kWindowTag, step, 1}));
}

/// Meta batch for `step`: classes are visited cyclically from a random
/// offset, so per-class counts differ by at most one.
template <class T>
MetaBatch<T> draw_meta_batch(const Dataset& train, const MetaSet& meta, const ParamVector<T>& theta,
                             const TrainerConfig& cfg, int steps, std::uint64_t step) {
    const auto C = meta.by_class.size();
    CounterRng rng(stream_key(cfg.seed, {detail::kMetaTag, step}));
    const auto offset = rng.uniform_int(0, C - 1);
    const ConditionEncoder<T> enc(theta);
    MetaBatch<T> out;
    for (std::size_t j = 0; j < cfg.meta_batch; ++j) {
        const auto& pool = meta.by_class[(offset + j) % C];
        if (pool.empty()) throw DataError("draw_meta_batch: meta set has an empty class");
        const auto& ref = meta.frames[pool[rng.uniform_int(0, pool.size() - 1)]];
        const auto& video = train.videos.at(ref.video);
        const auto rows = std::min(cfg.meta_context, ref.frame + 1);
        auto w = detail::cut_window(enc, video, ref.frame + 1 - rows, rows, steps,
                                    stream_key(cfg.seed, {detail::kMetaTag, step, j + 1}));
        std::fill(w.labels.begin(), w.labels.end() - 1, kMasked);
        out.frames.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses on a tape
// ---------------------------------------------------------------------------

/// Records the window and returns one loss node per labeled row.
template <class T>
std::vector<Var> record_window_losses(Tape<T>& tp, const DiffusionSchedule& s, const FrameWindow<T>& w, bool use_cdm) {
    const auto z = encode_on_tape<T>(tp, std::span<const T>(w.features), w.rows, std::span<const T>(w.h0));
    std::vector<Var> losses;
    for (std::size_t r = 0; r < w.rows; ++r) {
        if (w.labels[r] < 0) continue;
        losses.push_back(frame_loss_on_tape<T>(tp, s, z[r], std::size_t(w.labels[r]), w.timesteps[r],
                                               std::span<const T>(w.eps[r]), use_cdm));
    }
    return losses;
}

/// L_meta = (1/m) Σ_j L^j over the meta frames.
template <class T>
Var meta_loss_on_tape(Tape<T>& tp, const DiffusionSchedule& s, const MetaBatch<T>& batch, bool use_cdm) {
    if (batch.frames.empty()) throw ShapeError("meta loss: empty meta batch");
    std::vector<Var> losses;
    for (const auto& f : batch.frames) {
        auto l = record_window_losses(tp, s, f, use_cdm);
        losses.insert(losses.end(), l.begin(), l.end());
    }
    const std::vector<T> uniform(losses.size(), T(1) / T(losses.size()));
    return tp.weighted_sum(std::span<const Var>(losses), std::span<const T>(uniform));
}

/// (L_meta, ∇_Θ L_meta) at the given parameters.
template <class T>
std::pair<T, std::vector<T>> meta_gradient(const ParamVector<T>& theta, const DiffusionSchedule& s,
                                           const MetaBatch<T>& batch, bool use_cdm) {
    Tape<T> tp(theta);
    const Var l = meta_loss_on_tape(tp, s, batch, use_cdm);
    const T v = tp.scalar(l);
    if (!std::isfinite(double(v))) throw NumericError("meta loss is not finite");
    return {v, tp.gradient(l)};
}

// ---------------------------------------------------------------------------
// The three updates
// ---------------------------------------------------------------------------

/// Per-frame weights: the weight net's output, or a frozen constant.
template <class T>
std::vector<T> frame_weights(const ParamVector<T>& w, std::span<const T> losses, std::optional<double> fixed) {
    std::vector<T> out(losses.size());
    if (fixed) {
        std::fill(out.begin(), out.end(), T(*fixed));
        return out;
    }
    const MetaWeightNet<T> net(w);
    for (std::size_t i = 0; i < losses.size(); ++i) out[i] = net.weight(losses[i]);
    return out;
}

/// State cached by the inner step. Holds the recorded train tape, which
/// refers to the Θ it was built from; that Θ must outlive this object.
template <class T>
struct InnerState {
    Tape<T> tape;
    std::vector<Var> losses;
    std::vector<T> loss_values;
    std::vector<T> weights;
    ParamVector<T> theta_hat;
    double alpha = 0;

    std::size_t n() const noexcept { return losses.size(); }

    /// (1/n) Σ_i c_i·g_i in a single reverse sweep.
    std::vector<T> weighted_gradient(std::span<const T> c) const {
        std::vector<T> scaled(c.begin(), c.end());
        for (auto& v : scaled) v /= T(n());
        return tape.gradient(std::span<const Var>(losses), std::span<const T>(scaled));
    }
};

/// Θ̂ = Θ − (α/n)·Σ_i h(L^i; w)·g_i over a recorded window. Θ is not modified.
template <class T>
InnerState<T> inner_virtual_update(Tape<T> tape, std::vector<Var> losses, const ParamVector<T>& w, double alpha,
                                   std::optional<double> fixed_weight = std::nullopt) {
    if (losses.empty()) throw ShapeError("inner_virtual_update: batch has no labeled frames");
    InnerState<T> st{std::move(tape), std::move(losses), {}, {}, {}, alpha};
    for (std::size_t i = 0; i < st.losses.size(); ++i) {
        const T v = st.tape.scalar(st.losses[i]);
        if (!std::isfinite(double(v)))
            throw NumericError("inner_virtual_update: loss of frame " + std::to_string(i) + " is not finite");
        st.loss_values.push_back(v);
    }
    st.weights = frame_weights<T>(w, std::span<const T>(st.loss_values), fixed_weight);
    const auto g = st.weighted_gradient(std::span<const T>(st.weights));
    auto values = st.tape.params().values();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] -= T(alpha) * g[k];
    st.theta_hat = st.tape.params().with_values(std::move(values));
    return st;
}

template <class T>
InnerState<T> inner_virtual_update(const ParamVector<T>& theta, const ParamVector<T>& w, const DiffusionSchedule& s,
                                   const FrameWindow<T>& batch, const TrainerConfig& cfg) {
    Tape<T> tape(theta);
    auto losses = record_window_losses(tape, s, batch, cfg.use_cdm);
    return inner_virtual_update(std::move(tape), std::move(losses), w, cfg.alpha, cfg.fixed_weight);
}

/// ∇_w L_meta = −(α/n)·Σ_i (G·g_i)·∇_w h(L^i; w), with G = ∇_Θ̂ L_meta.
/// The products G·g_i come from one forward-mode sweep of the train tape.
template <class T>
std::vector<T> hypergradient_from_meta_gradient(const InnerState<T>& inner, std::span<const T> meta_grad,
                                                const ParamVector<T>& w, double alpha) {
    const auto dots = inner.tape.tangents(meta_grad, std::span<const Var>(inner.losses));
    Tape<T> wt(w);
    std::vector<Var> heads;
    std::vector<T> coef;
    const T scale = -T(alpha) / T(inner.n());
    for (std::size_t i = 0; i < inner.n(); ++i) {
        heads.push_back(weight_on_tape(wt, wt.scalar_constant(inner.loss_values[i])));
        coef.push_back(scale * dots[i][0]);
    }
    return wt.gradient(std::span<const Var>(heads), std::span<const T>(coef));
}

template <class T>
struct MetaUpdate {
    ParamVector<T> w;
    std::vector<T> hypergradient;
    T meta_loss = 0;
};

/// w' from the cached inner state and a meta batch.
template <class T>
MetaUpdate<T> meta_weight_update(const ParamVector<T>& w, const InnerState<T>& inner, const DiffusionSchedule& s,
                                 const MetaBatch<T>& meta, const TrainerConfig& cfg, AdamState<T>& opt) {
    auto [loss, G] = meta_gradient(inner.theta_hat, s, meta, cfg.use_cdm);
    auto hyper = hypergradient_from_meta_gradient(inner, std::span<const T>(G), w, inner.alpha);
    for (auto v : hyper)
        if (!std::isfinite(double(v))) throw NumericError("meta_weight_update: hypergradient is not finite");
    auto values = w.values();
    optimizer_step<T>(cfg.meta_optimizer, values, std::span<const T>(hyper), cfg.beta, opt, cfg);
    return {w.with_values(std::move(values)), std::move(hyper), loss};
}

/// Θ' = Θ − (α/n)·Σ_i h(L^i; w')·g_i, reusing the recorded g_i.
template <class T>
ParamVector<T> outer_update(const InnerState<T>& inner, const ParamVector<T>& w_new, const TrainerConfig& cfg,
                            AdamState<T>& opt, std::vector<T>* weights_out = nullptr) {
    const auto weights = frame_weights<T>(w_new, std::span<const T>(inner.loss_values), cfg.fixed_weight);
    const auto g = inner.weighted_gradient(std::span<const T>(weights));
    auto values = inner.tape.params().values();
    optimizer_step<T>(cfg.optimizer, values, std::span<const T>(g), cfg.alpha, opt, cfg);
    if (weights_out) *weights_out = weights;
    return inner.tape.params().with_values(std::move(values));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepLog {
    std::uint64_t step = 0;
    std::string phase;
    std::size_t frames = 0;
    double train_loss = 0;
    double meta_loss = 0;
    double weight_mean = 0, weight_min = 0, weight_max = 0;
    bool skipped = false;
};

inline nlohmann::json to_json(const StepLog& s) {
    nlohmann::json j{{"step", s.step}, {"phase", s.phase}, {"frames", s.frames}, {"skipped", s.skipped}};
    if (!s.skipped) {
        j["train_loss"] = s.train_loss;
        j["meta_loss"] = s.meta_loss;
        j["weight"] = {{"mean", s.weight_mean}, {"min", s.weight_min}, {"max", s.weight_max}};
    }
    return j;
}

/// Runs one training step in place. Steps below pretrain_steps train the
/// encoder with cross-entropy and unit weights; later steps follow the
/// use_cdm / use_mlo toggles.
template <class T>
StepLog train_step(ModelState<T>& state, const TrainerConfig& cfg, const DiffusionSchedule& s, const Dataset& train,
                   const MetaSet& meta) {
    StepLog log;
    log.step = state.step;
    const bool pretrain = state.step < cfg.pretrain_steps;
    log.phase = pretrain ? "pretrain" : "joint";
    const auto window = draw_window<T>(train, state.theta, cfg, s.steps(), state.step);

    TrainerConfig local = cfg;
    if (pretrain) {
        local.use_cdm = false;
        local.use_mlo = false;
    }
    if (!local.use_mlo && !local.fixed_weight) local.fixed_weight = 1.0;

    Tape<T> tape(state.theta);
    auto losses = record_window_losses(tape, s, window, local.use_cdm);
    log.frames = losses.size();
    if (losses.empty()) {
        log.skipped = true;
        ++state.step;
        return log;
    }
    auto inner = inner_virtual_update(std::move(tape), std::move(losses), state.w, local.alpha, local.fixed_weight);
    for (auto v : inner.loss_values) log.train_loss += double(v);
    log.train_loss /= double(inner.n());
    if (!(log.train_loss <= cfg.divergence))
        throw NumericError("training diverged at step " + std::to_string(state.step) +
                           ": mean loss " + std::to_string(log.train_loss));

    ParamVector<T> w_new = state.w;
    if (local.use_mlo && !cfg.fixed_weight) {
        const auto batch = draw_meta_batch<T>(train, meta, state.theta, local, s.steps(), state.step);
        auto upd = meta_weight_update(state.w, inner, s, batch, local, state.w_opt);
        w_new = std::move(upd.w);
        log.meta_loss = double(upd.meta_loss);
    }
    std::vector<T> weights;
    auto theta_new = outer_update(inner, w_new, local, state.theta_opt, &weights);
    for (auto v : theta_new.values())
        if (!std::isfinite(double(v))) throw NumericError("training diverged at step " + std::to_string(state.step));
    log.weight_min = double(*std::min_element(weights.begin(), weights.end()));
    log.weight_max = double(*std::max_element(weights.begin(), weights.end()));
    for (auto v : weights) log.weight_mean += double(v);
    log.weight_mean /= double(weights.size());
    state.theta = std::move(theta_new);
    state.w = std::move(w_new);
    ++state.step;
    return log;
}

/// Trains until pretrain_steps + steps. Each step writes one JSON line to
/// `log` and its wall time to `timing` (kept apart so logs stay reproducible).
/// `on_step` runs after every step, e.g. for periodic checkpoints.
template <class T>
ModelState<T> train(ModelState<T> state, const TrainerConfig& cfg, const DiffusionSchedule& s, const Dataset& train,
                    const MetaSet& meta, std::ostream* log = nullptr, std::ostream* timing = nullptr,
                    const std::type_identity_t<std::function<void(const ModelState<T>&)>>& on_step = {}) {
    cfg.validate();
    if (train.labeled_frames() == 0) throw DataError("train: every training frame is masked");
    const auto total = cfg.pretrain_steps + cfg.steps;
    while (state.step < total) {
        const auto start = std::chrono::steady_clock::now();
        const auto entry = train_step(state, cfg, s, train, meta);
        const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
        if (log) *log << to_json(entry).dump() << '\n';
        if (timing) *timing << nlohmann::json{{"step", entry.step}, {"wall_ms", took.count()}}.dump() << '\n';
        if (on_step) on_step(state);
    }
    return state;
}

/// The model state a fresh run starts from.
template <class T>
ModelState<T> initial_state(const NetworkDims& dims, std::uint64_t seed) {
    return {make_model_params<T>(dims, stream_key(seed, {0x7E7Au})), make_weight_net_params<T>(dims, stream_key(seed, {0x3Bu})),
            {}, {}, 0};
}

// ---------------------------------------------------------------------------
// Learned-weight export
// ---------------------------------------------------------------------------

struct WeightSample {
    std::size_t video = 0;
    std::size_t frame = 0;
    int label = 0;
    double loss = 0;
    double weight = 0;
};

/// Loss and weight of every `stride`-th labeled training frame under the
/// given state. Losses use the same formulation as training with fresh draws.
template <class T>
std::vector<WeightSample> frame_weight_samples(const ModelState<T>& state, const TrainerConfig& cfg,
                                               const DiffusionSchedule& s, const Dataset& train, std::size_t stride = 1) {
    if (stride == 0) throw RangeError("frame_weight_samples: stride must be >= 1");
    const ConditionEncoder<T> enc(state.theta);
    const NoisePredictor<T> np(state.theta, s.steps());
    const MetaWeightNet<T> net(state.w);
    std::vector<WeightSample> out;
    std::vector<T> x(train.features);
    for (std::size_t v = 0; v < train.videos.size(); ++v) {
        const auto& video = train.videos[v];
        auto h = enc.initial_state();
        for (std::size_t f = 0; f < video.length(); ++f) {
            const auto fr = video.frame(f);
            std::copy(fr.begin(), fr.end(), x.begin());
            enc.step(h, std::span<const T>(x));
            const int label = video.labels[f];
            if (label < 0 || f % stride != 0) continue;
            const auto z = enc.project(std::span<const T>(h));
            T loss = cross_entropy(std::span<const T>(z), std::size_t(label));
            if (cfg.use_cdm) {
                CounterRng rng(stream_key(cfg.seed, {detail::kSampleTag, v, f}));
                const int t = int(rng.uniform_int(1, std::uint64_t(s.steps())));
                const auto y0 = one_hot<T>(z.size(), std::size_t(label));
                loss += noise_loss<T>(s, np, std::span<const T>(y0), std::span<const T>(z), t, rng);
            }
            const double weight = cfg.fixed_weight ? *cfg.fixed_weight : double(net.weight(loss));
            out.push_back({v, f, label, double(loss), weight});
        }
    }
    return out;
}

} // namespace phasediff
