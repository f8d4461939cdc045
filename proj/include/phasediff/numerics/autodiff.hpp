#pragma once

#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "phasediff/error.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/numerics/tape.hpp"
#include "phasediff/numerics/tensor.hpp"

namespace phasediff {

/// A computation description: records itself on a tape from the given
/// inputs and returns the output node.
template <class G, class T>
concept Graph = requires(G g, Tape<T>& tape, std::span<const Tensor<T>> inputs) {
    { g(tape, inputs) } -> std::same_as<Var>;
};

template <class T, Graph<T> G>
Tensor<T> evaluate(G&& graph, const ParamVector<T>& params, std::span<const Tensor<T>> inputs) {
    Tape<T> tape(params);
    return tape.tensor(graph(tape, inputs));
}

template <class T, Graph<T> G>
GradientRecord<T> backward(G&& graph, const ParamVector<T>& params, std::span<const Tensor<T>> inputs) {
    Tape<T> tape(params);
    const Var loss = graph(tape, inputs);
    if (tape.value(loss).size() != 1)
        throw ShapeError("backward: loss must be scalar, graph produced " + std::to_string(tape.value(loss).size()) +
                         " values");
    return {tape.scalar(loss), tape.gradient(loss)};
}

/// One GradientRecord per example; record i is backward() on batch[i] alone.
template <class T, Graph<T> G>
std::vector<GradientRecord<T>> per_example_gradients(G&& graph, const ParamVector<T>& params,
                                                     std::span<const std::vector<Tensor<T>>> batch) {
    if (batch.empty()) throw ShapeError("per_example_gradients: empty batch");
    std::vector<GradientRecord<T>> out;
    out.reserve(batch.size());
    for (const auto& example : batch)
        out.push_back(backward<T>(graph, params, std::span<const Tensor<T>>(example)));
    return out;
}

/// Per-example gradients for several scalar losses recorded on one tape
/// (e.g. the per-frame losses of one window). One reverse sweep per loss.
template <class T>
std::vector<GradientRecord<T>> per_example_gradients(const Tape<T>& tape, std::span<const Var> losses) {
    if (losses.empty()) throw ShapeError("per_example_gradients: empty batch");
    std::vector<GradientRecord<T>> out;
    out.reserve(losses.size());
    for (auto l : losses) out.push_back({tape.scalar(l), tape.gradient(l)});
    return out;
}

/// Central finite differences of a scalar function of the parameter values.
/// Independent of the tape: only forward evaluations are used.
template <class T>
std::vector<T> central_difference(const std::function<T(const ParamVector<T>&)>& f, const ParamVector<T>& params,
                                  T step) {
    std::vector<T> grad(params.size());
    ParamVector<T> probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T orig = probe.values()[i];
        probe.values()[i] = orig + step;
        const T up = f(probe);
        probe.values()[i] = orig - step;
        const T down = f(probe);
        probe.values()[i] = orig;
        grad[i] = (up - down) / (T(2) * step);
    }
    return grad;
}

/// ‖a − b‖ / max(‖b‖, floor).
template <class T>
T relative_error(std::span<const T> a, std::span<const T> b, T floor = T(1e-300)) {
    if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
    T num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

} // namespace phasediff
