#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "phasediff/error.hpp"
#include "phasediff/networks.hpp"
#include "phasediff/numerics/rng.hpp"
#include "phasediff/numerics/tape.hpp"
#include "phasediff/schedule.hpp"

namespace phasediff {

/// One-hot ground-truth embedding y_0.
template <class T>
std::vector<T> one_hot(std::size_t classes, std::size_t label) {
    if (label >= classes) throw RangeError("one_hot: label " + std::to_string(label) + " >= " + std::to_string(classes));
    std::vector<T> y(classes, T(0));
    y[label] = T(1);
    return y;
}

template <class T>
struct DiffusionSample {
    std::vector<T> y_t;
    int t = 0;
    std::vector<T> eps;
};

/// y = √c·y_0 + (1 − √c)·z + √(1 − c)·eps for a cumulative level c.
template <class T>
std::vector<T> forward_marginal(double c, std::span<const T> y0, std::span<const T> z, std::span<const T> eps) {
    if (y0.size() != z.size() || eps.size() != z.size())
        throw ShapeError("forward_sample: y0, z and eps must have the same length");
    const T a = T(std::sqrt(c)), b = T(1.0 - std::sqrt(c)), n = T(std::sqrt(1.0 - c));
    std::vector<T> y(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) y[k] = a * y0[k] + b * z[k] + n * eps[k];
    return y;
}

/// Draws y_t from q(y_t | y_0, z) with an explicit eps.
template <class T>
DiffusionSample<T> forward_sample(const DiffusionSchedule& s, std::span<const T> y0, std::span<const T> z, int t,
                                  std::vector<T> eps) {
    if (t < 1 || t > s.steps()) throw RangeError("forward_sample: t=" + std::to_string(t) + " outside [1, T]");
    auto y = forward_marginal<T>(s.cum_alpha(t), y0, z, eps);
    return {std::move(y), t, std::move(eps)};
}

template <class T>
DiffusionSample<T> forward_sample(const DiffusionSchedule& s, std::span<const T> y0, std::span<const T> z, int t,
                                  CounterRng& rng) {
    std::vector<T> eps(z.size());
    for (auto& e : eps) e = T(rng.normal());
    return forward_sample<T>(s, y0, z, t, std::move(eps));
}

/// ŷ_0 recovered from y_t by inverting the forward marginal:
///   ŷ_0 = (y_t − (1 − √c_t)·z − √(1 − c_t)·ε̂) / √c_t
template <class T>
std::vector<T> reconstruct_y0(double cum_t, std::span<const T> y_t, std::span<const T> z, std::span<const T> eps_hat) {
    const T a = T(std::sqrt(cum_t)), b = T(1.0 - std::sqrt(cum_t)), n = T(std::sqrt(1.0 - cum_t));
    std::vector<T> y0(y_t.size());
    for (std::size_t k = 0; k < y_t.size(); ++k) y0[k] = (y_t[k] - b * z[k] - n * eps_hat[k]) / a;
    return y0;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// ‖eps − ε_Θ(y_t, z, t)‖² on a tape. `z` is a tape node so the gradient
/// reaches the encoder both through y_t and through the conditioning input.
template <class T>
Var noise_loss_on_tape(Tape<T>& tp, const DiffusionSchedule& s, std::span<const T> y0, Var z, int t,
                       std::span<const T> eps) {
    const double c = s.cum_alpha(t);
    const auto C = y0.size();
    std::vector<T> fixed(C);
    for (std::size_t k = 0; k < C; ++k) fixed[k] = T(std::sqrt(c)) * y0[k] + T(std::sqrt(1.0 - c)) * eps[k];
    const Var y_t = tp.add(tp.scale(z, T(1.0 - std::sqrt(c))), tp.constant(std::span<const T>(fixed)));
    const Var eps_hat = noise_on_tape(tp, y_t, z, t, s.steps());
    return tp.sqnorm(tp.sub(tp.constant(eps), eps_hat));
}

/// Per-frame training loss: noise loss (when the diffusion head is on) plus
/// cross-entropy of the coarse representation.
template <class T>
Var frame_loss_on_tape(Tape<T>& tp, const DiffusionSchedule& s, Var z, std::size_t label, int t,
                       std::span<const T> eps, bool use_cdm) {
    const Var ce = cross_entropy_on_tape(tp, z, label);
    if (!use_cdm) return ce;
    const auto y0 = one_hot<T>(tp.rows(z), label);
    return tp.add(noise_loss_on_tape<T>(tp, s, y0, z, t, eps), ce);
}

template <class T>
T noise_loss(const DiffusionSchedule& s, const NoisePredictor<T>& np, std::span<const T> y0, std::span<const T> z, int t,
             CounterRng& rng) {
    const auto sample = forward_sample<T>(s, y0, z, t, rng);
    const auto eps_hat = predict_noise(np, std::span<const T>(sample.y_t), z, t);
    T loss = 0;
    for (std::size_t k = 0; k < eps_hat.size(); ++k) loss += (sample.eps[k] - eps_hat[k]) * (sample.eps[k] - eps_hat[k]);
    return loss;
}

template <class T>
T frame_loss(T noise, T ce) {
    return noise + ce;
}

// ---------------------------------------------------------------------------
// ELBO diagnostics
// ---------------------------------------------------------------------------

/// KL(N(mq, vq) ‖ N(mp, vp)) for one dimension.
inline double gaussian_kl(double mq, double vq, double mp, double vp) {
    return 0.5 * (std::log(vp / vq) + (vq + (mq - mp) * (mq - mp)) / vp - 1.0);
}

struct ElboTerms {
    double reconstruction = 0;   // −log p(y_0 | y_1, z)
    std::vector<double> kl;      // kl[t] for t = 2..T (kl[0], kl[1] unused)
    double terminal_kl = 0;      // KL(q(y_T | y_0, z) ‖ N(z, I))
};

/// Closed-form ELBO terms for one frame.
///   y_t[t]            a sample of q(y_t | y_0, z) for t = 1..T
///   predicted_mean[t] the model's mean of p(y_{t−1} | y_t, z) for t = 1..T
/// The model's reverse variances are the posterior ones (γ3·β_t); the
/// reconstruction term uses variance β_1.
inline ElboTerms elbo_terms(const DiffusionSchedule& s, std::span<const double> y0, std::span<const double> z,
                            std::span<const std::vector<double>> y_t,
                            std::span<const std::vector<double>> predicted_mean) {
    const int T = s.steps();
    if (y_t.size() != std::size_t(T) + 1 || predicted_mean.size() != std::size_t(T) + 1)
        throw ShapeError("elbo_terms: need entries for t = 0..T");
    const auto C = y0.size();
    ElboTerms out;
    out.kl.assign(std::size_t(T) + 1, 0.0);
    const double v1 = s.beta(1);
    for (std::size_t k = 0; k < C; ++k) {
        const double d = y0[k] - predicted_mean[1][k];
        out.reconstruction += 0.5 * (std::log(2.0 * std::numbers::pi * v1) + d * d / v1);
    }
    for (int t = 2; t <= T; ++t) {
        const auto g = s.posterior_coefficients(t);
        const double var = g.gamma3 * s.beta(t);
        for (std::size_t k = 0; k < C; ++k) {
            const double mq = g.gamma0 * y0[k] + g.gamma1 * y_t[std::size_t(t)][k] + g.gamma2 * z[k];
            out.kl[std::size_t(t)] += gaussian_kl(mq, var, predicted_mean[std::size_t(t)][k], var);
        }
    }
    const double cT = s.cum_alpha(T);
    for (std::size_t k = 0; k < C; ++k) {
        const double mq = std::sqrt(cT) * y0[k] + (1.0 - std::sqrt(cT)) * z[k];
        out.terminal_kl += gaussian_kl(mq, 1.0 - cT, z[k], 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse inference
// ---------------------------------------------------------------------------

/// m reverse-process outcomes ŷ_0 for one frame (row-major m x C).
template <class T>
struct TrajectorySet {
    std::size_t trajectories = 0;
    std::size_t classes = 0;
    std::vector<T> values;
    std::vector<std::uint64_t> stream_ids;

    std::span<const T> row(std::size_t k) const { return std::span<const T>(values).subspan(k * classes, classes); }
};

/// Identifies the random streams of one frame: trajectories are keyed by
/// (seed, video, frame, trajectory, timestep), never by buffer position.
struct FrameStreams {
    std::uint64_t seed = 0;
    std::uint64_t video = 0;
    std::uint64_t frame = 0;
};

/// Runs m trajectories from y_T ~ N(z, I) down the reverse plan. Each step
/// forms ŷ_0 from the predicted noise; intermediate steps draw
/// y_prev = γ0·ŷ_0 + γ1·y_t + γ2·z + √(γ3·β)·ε, the terminal step returns ŷ_0.
template <class T>
TrajectorySet<T> reverse_infer(const std::vector<ReverseStep>& plan, const NoisePredictor<T>& np, std::span<const T> z,
                               std::size_t m, const FrameStreams& streams) {
    if (m == 0) throw RangeError("reverse_infer: need at least one trajectory");
    if (plan.empty() || plan.back().prev != 0) throw RangeError("reverse_infer: plan must end at the terminal step");
    const auto C = z.size();
    const auto Ci = Eigen::Index(C);
    detail::RowMat<T> Y(Eigen::Index(m), Ci);
    TrajectorySet<T> out{m, C, {}, {}};
    const int top = plan.front().t;
    for (std::size_t k = 0; k < m; ++k) {
        out.stream_ids.push_back(stream_key(streams.seed, {streams.video, streams.frame, k}));
        CounterRng rng(stream_key(out.stream_ids[k], {std::uint64_t(top) + 1}));
        for (std::size_t c = 0; c < C; ++c) Y(Eigen::Index(k), Eigen::Index(c)) = z[c] + T(rng.normal());
    }
    const Eigen::Map<const detail::ColVec<T>> zv(z.data(), Ci);
    for (const auto& st : plan) {
        const auto E = np.predict_rows(Y, z, st.t);
        const T a = T(std::sqrt(st.cum_t)), b = T(1.0 - std::sqrt(st.cum_t)), n = T(std::sqrt(1.0 - st.cum_t));
        detail::RowMat<T> Y0 = Y - n * E;
        Y0.rowwise() -= (b * zv).transpose();
        Y0 /= a;
        if (st.prev == 0) {
            out.values.assign(Y0.data(), Y0.data() + Y0.size());
            return out;
        }
        const auto& g = st.gamma;
        const T sd = T(std::sqrt(g.gamma3 * st.beta));
        detail::RowMat<T> next = T(g.gamma0) * Y0 + T(g.gamma1) * Y;
        next.rowwise() += (T(g.gamma2) * zv).transpose();
        for (std::size_t k = 0; k < m; ++k) {
            CounterRng rng(stream_key(out.stream_ids[k], {std::uint64_t(st.t)}));
            for (std::size_t c = 0; c < C; ++c) next(Eigen::Index(k), Eigen::Index(c)) += sd * T(rng.normal());
        }
        Y = std::move(next);
    }
    return out; // unreachable: the plan ends with prev == 0
}

template <class T>
TrajectorySet<T> reverse_infer(const DiffusionSchedule& s, const NoisePredictor<T>& np, std::span<const T> z,
                               std::size_t m, int steps, const FrameStreams& streams) {
    return reverse_infer(reverse_plan(s, steps), np, z, m, streams);
}

template <class T>
std::vector<T> softmax_row(std::span<const T> v) {
    std::vector<T> p(v.begin(), v.end());
    const T mx = *std::max_element(p.begin(), p.end());
    T total = 0;
    for (auto& x : p) total += (x = std::exp(x - mx));
    for (auto& x : p) x /= total;
    return p;
}

/// First index of the maximum (ties → smaller class id).
template <class T>
std::size_t argmax(std::span<const T> v) {
    return std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
}

enum class DecisionRule { majority_vote, max_probability };

template <class T>
struct Aggregate {
    std::size_t label = 0;
    std::vector<T> mean_probs;
    std::vector<std::size_t> votes;
};

/// Majority vote over per-trajectory argmax (ties → smaller class id), or the
/// class holding the single largest probability across all trajectories.
/// mean_probs is the trajectory-order mean of softmax-normalised rows.
template <class T>
Aggregate<T> aggregate_prediction(const TrajectorySet<T>& ts, DecisionRule rule = DecisionRule::majority_vote) {
    if (ts.trajectories == 0) throw RangeError("aggregate_prediction: empty trajectory set");
    Aggregate<T> out;
    out.mean_probs.assign(ts.classes, T(0));
    out.votes.assign(ts.classes, 0);
    T best = -1;
    std::size_t best_class = 0;
    for (std::size_t k = 0; k < ts.trajectories; ++k) {
        const auto row = ts.row(k);
        ++out.votes[argmax(row)];
        const auto p = softmax_row(row);
        for (std::size_t c = 0; c < ts.classes; ++c) {
            out.mean_probs[c] += p[c];
            if (p[c] > best || (p[c] == best && c < best_class)) {
                best = p[c];
                best_class = c;
            }
        }
    }
    for (auto& v : out.mean_probs) v /= T(ts.trajectories);
    out.label = rule == DecisionRule::majority_vote ? argmax(std::span<const std::size_t>(out.votes)) : best_class;
    return out;
}

} // namespace phasediff
