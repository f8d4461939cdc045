#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "phasediff/error.hpp"

namespace phasediff {

/// Coefficients of the posterior q(y_{t-1} | y_t, y_0, z):
///   mean     = gamma0·y_0 + gamma1·y_t + gamma2·z
///   variance = gamma3·beta
struct PosteriorCoefficients {
    double gamma0 = 0;
    double gamma1 = 0;
    double gamma2 = 0;
    double gamma3 = 0;
};

namespace detail {

/// Posterior coefficients for a transition whose cumulative signal level goes
/// from `cum_prev` (at the earlier step) to `cum_t`.
inline PosteriorCoefficients posterior_from_cumulative(double cum_prev, double cum_t) {
    const double perstep = cum_t / cum_prev;
    const double beta = 1.0 - perstep;
    const double denom = 1.0 - cum_t;
    PosteriorCoefficients g;
    g.gamma0 = beta * std::sqrt(cum_prev) / denom;
    g.gamma1 = (1.0 - cum_prev) * std::sqrt(perstep) / denom;
    g.gamma2 = 1.0 + (std::sqrt(cum_t) - 1.0) * (std::sqrt(perstep) + std::sqrt(cum_prev)) / denom;
    g.gamma3 = (1.0 - cum_prev) / denom;
    return g;
}

} // namespace detail

struct ScheduleDescriptor {
    int steps = 0;
    double beta_start = 0;
    double beta_end = 0;
    bool operator==(const ScheduleDescriptor&) const = default;
};

/// Immutable linear noise schedule with every per-timestep quantity
/// precomputed. Arrays are indexed by timestep t in [0, T]; index 0 of the
/// per-step arrays is unused (cum_alpha[0] = 1).
class DiffusionSchedule {
public:
    DiffusionSchedule(int steps, double beta_start, double beta_end)
        : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
        if (steps < 2) throw RangeError("schedule: T must be at least 2, got " + std::to_string(steps));
        if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
            throw RangeError("schedule: need 0 < beta_start <= beta_end < 1, got (" + std::to_string(beta_start) +
                             ", " + std::to_string(beta_end) + ")");
        const auto n = static_cast<std::size_t>(steps) + 1;
        beta_.assign(n, 0.0);
        perstep_.assign(n, 1.0);
        cum_.assign(n, 1.0);
        one_minus_cum_.assign(n, 0.0);
        gamma_.assign(n, {});
        for (int t = 1; t <= steps; ++t) {
            beta_[t] = beta_start + (beta_end - beta_start) * double(t - 1) / double(steps - 1);
            perstep_[t] = 1.0 - beta_[t];
            cum_[t] = perstep_[t] * cum_[t - 1];
            one_minus_cum_[t] = 1.0 - cum_[t];
        }
        // t = 1 boundary: the posterior collapses onto y_0.
        gamma_[1] = {1.0, 0.0, 0.0, 0.0};
        for (int t = 2; t <= steps; ++t) {
            const double denom = 1.0 - cum_[t];
            auto& g = gamma_[t];
            g.gamma0 = beta_[t] * std::sqrt(cum_[t - 1]) / denom;
            g.gamma1 = (1.0 - cum_[t - 1]) * std::sqrt(perstep_[t]) / denom;
            g.gamma2 = 1.0 + (std::sqrt(cum_[t]) - 1.0) * (std::sqrt(perstep_[t]) + std::sqrt(cum_[t - 1])) / denom;
            g.gamma3 = (1.0 - cum_[t - 1]) / denom;
        }
    }

    int steps() const noexcept { return steps_; }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }
    ScheduleDescriptor descriptor() const noexcept { return {steps_, beta_start_, beta_end_}; }

    double beta(int t) const { return beta_.at(check(t, 1)); }
    double perstep_alpha(int t) const { return perstep_.at(check(t, 1)); }
    double cum_alpha(int t) const { return cum_.at(check(t, 0)); }
    double one_minus_cum(int t) const { return one_minus_cum_.at(check(t, 1)); }

    /// gamma0..gamma3 for 2 <= t <= T.
    PosteriorCoefficients posterior_coefficients(int t) const {
        if (t < 2 || t > steps_)
            throw RangeError("posterior_coefficients: t=" + std::to_string(t) + " outside [2, " +
                             std::to_string(steps_) + "]");
        return gamma_[t];
    }

    /// Stored t = 1 boundary entry (1, 0, 0, 0).
    const PosteriorCoefficients& boundary_coefficients() const noexcept { return gamma_[1]; }

    bool operator==(const DiffusionSchedule& o) const {
        return steps_ == o.steps_ && beta_start_ == o.beta_start_ && beta_end_ == o.beta_end_;
    }

private:
    int steps_;
    double beta_start_;
    double beta_end_;
    std::vector<double> beta_, perstep_, cum_, one_minus_cum_;
    std::vector<PosteriorCoefficients> gamma_;

    int check(int t, int lo) const {
        if (t < lo || t > steps_)
            throw RangeError("schedule: timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                             std::to_string(steps_) + "]");
        return t;
    }
};

inline DiffusionSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
    return DiffusionSchedule(steps, beta_start, beta_end);
}

inline PosteriorCoefficients posterior_coefficients(const DiffusionSchedule& s, int t) {
    return s.posterior_coefficients(t);
}

struct GaussianPosterior {
    double mean = 0;
    double variance = 0;
};

/// Scalar posterior q(y_{t-1} | y_t, y_0, z) by direct Gaussian conjugacy of
///   q(y_t | y_{t-1}, z) = N(√a_t·y_{t-1} + (1-√a_t)·z, β_t)
///   q(y_{t-1} | y_0, z) = N(√c_{t-1}·y_0 + (1-√c_{t-1})·z, 1-c_{t-1})
/// Written without the gamma coefficients so it can check them.
inline GaussianPosterior conjugacy_oracle(const DiffusionSchedule& s, int t, double y0, double z, double yt) {
    if (t < 2 || t > s.steps())
        throw RangeError("conjugacy_oracle: t=" + std::to_string(t) + " outside [2, " + std::to_string(s.steps()) + "]");
    const double a = s.perstep_alpha(t);
    const double beta = s.beta(t);
    const double c_prev = s.cum_alpha(t - 1);
    const double prior_mean = std::sqrt(c_prev) * y0 + (1.0 - std::sqrt(c_prev)) * z;
    const double prior_var = 1.0 - c_prev;
    // Likelihood in y_{t-1}: precision a/β, centred where √a·y_{t-1} = y_t − (1−√a)·z.
    const double precision = a / beta + 1.0 / prior_var;
    const double weighted = std::sqrt(a) * (yt - (1.0 - std::sqrt(a)) * z) / beta + prior_mean / prior_var;
    return {weighted / precision, 1.0 / precision};
}

/// One reverse step: from timestep `t` down to `prev` (prev = 0 marks the
/// terminal step that returns ŷ_0 directly).
struct ReverseStep {
    int t = 0;
    int prev = 0;
    double cum_t = 1;
    double beta = 0;
    PosteriorCoefficients gamma;
};

/// Reverse plan over a uniform subsequence of `k` timesteps
/// (T/k, 2T/k, ..., T), highest first. k == T yields the full chain with the
/// schedule's own coefficients. Requires k to divide T.
inline std::vector<ReverseStep> reverse_plan(const DiffusionSchedule& s, int k) {
    const int T = s.steps();
    if (k < 1 || k > T || T % k != 0)
        throw RangeError("reverse_plan: step count " + std::to_string(k) + " must divide T=" + std::to_string(T));
    const int stride = T / k;
    std::vector<ReverseStep> plan;
    plan.reserve(static_cast<std::size_t>(k));
    for (int j = k; j >= 1; --j) {
        ReverseStep st;
        st.t = j * stride;
        st.prev = (j - 1) * stride;
        st.cum_t = s.cum_alpha(st.t);
        if (st.prev == 0) {
            st.beta = 1.0 - st.cum_t;
            st.gamma = s.boundary_coefficients();
        } else if (stride == 1) {
            st.beta = s.beta(st.t);
            st.gamma = s.posterior_coefficients(st.t);
        } else {
            const double cum_prev = s.cum_alpha(st.prev);
            st.beta = 1.0 - st.cum_t / cum_prev;
            st.gamma = detail::posterior_from_cumulative(cum_prev, st.cum_t);
        }
        plan.push_back(st);
    }
    return plan;
}

} // namespace phasediff
