#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phasediff/error.hpp"

namespace phasediff {

/// A named slice of a flat parameter vector. Matrices are row-major
/// (`rows` x `cols`); vectors use cols == 1.
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const Segment&) const = default;
};

/// Flat parameter storage with named segments. Segments are appended in
/// order, so offsets are disjoint and cover [0, size()).
template <class T>
class ParamVector {
public:
    ParamVector() = default;

    const Segment& add(std::string name, std::size_t rows, std::size_t cols = 1) {
        if (contains(name)) throw ShapeError("param_vector: duplicate segment '" + name + "'");
        segments_.push_back(Segment{std::move(name), values_.size(), rows, cols});
        values_.resize(values_.size() + rows * cols, T(0));
        return segments_.back();
    }

    bool contains(std::string_view name) const {
        return std::any_of(segments_.begin(), segments_.end(),
                           [&](const Segment& s) { return s.name == name; });
    }

    const Segment& segment(std::string_view name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw ShapeError("param_vector: no segment named '" + std::string(name) + "'");
    }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < segments_.size(); ++i)
            if (segments_[i].name == name) return i;
        throw ShapeError("param_vector: no segment named '" + std::string(name) + "'");
    }

    std::span<T> slice(std::string_view name) {
        const auto& s = segment(name);
        return {values_.data() + s.offset, s.size()};
    }
    std::span<const T> slice(std::string_view name) const {
        const auto& s = segment(name);
        return {values_.data() + s.offset, s.size()};
    }

    const std::vector<Segment>& segments() const noexcept { return segments_; }
    std::vector<T>& values() noexcept { return values_; }
    const std::vector<T>& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    /// Same layout, values replaced. Throws if the length differs.
    ParamVector with_values(std::vector<T> v) const {
        if (v.size() != values_.size())
            throw ShapeError("param_vector: expected " + std::to_string(values_.size()) +
                             " values, got " + std::to_string(v.size()));
        ParamVector out = *this;
        out.values_ = std::move(v);
        return out;
    }

    /// Little-endian IEEE-754 binary64 image of the values.
    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out(values_.size() * 8);
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const double d = static_cast<double>(values_[i]);
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        return out;
    }

    void assign_bytes(std::span<const std::uint8_t> bytes) {
        if (bytes.size() != values_.size() * 8)
            throw ShapeError("param_vector: byte block has " + std::to_string(bytes.size()) +
                             " bytes, layout needs " + std::to_string(values_.size() * 8));
        for (std::size_t i = 0; i < values_.size(); ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[i * 8 + b]) << (8 * b);
            double d;
            std::memcpy(&d, &bits, 8);
            values_[i] = static_cast<T>(d);
        }
    }

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<Segment> segments_;
    std::vector<T> values_;
};

/// Loss value plus a gradient laid out like the parameter vector.
template <class T>
struct GradientRecord {
    T loss = T(0);
    std::vector<T> gradient;
};

} // namespace phasediff
