#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "phasediff/error.hpp"

namespace phasediff {

/// Dense row-major tensor. Only rank 1 and rank 2 are used by the networks,
/// but the shape is kept general so that error messages can name it.
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> values;

    Tensor() = default;

    Tensor(std::vector<std::size_t> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (element_count(shape) != values.size()) {
            throw ShapeError("tensor: shape " + shape_string(shape) + " needs " +
                             std::to_string(element_count(shape)) + " values, got " +
                             std::to_string(values.size()));
        }
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        const auto n = element_count(s);
        return Tensor(std::move(s), std::vector<T>(n, T(0)));
    }

    static Tensor vector(std::vector<T> v) {
        const auto n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    std::size_t size() const noexcept { return values.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t rows() const noexcept { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const noexcept { return shape.size() < 2 ? 1 : shape[1]; }

    T& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << ']';
        return os.str();
    }

    bool operator==(const Tensor&) const = default;
};

} // namespace phasediff
