#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "phasediff/phasediff.hpp"

namespace phasediff::testing {

inline NetworkDims tiny_dims(std::size_t classes = 3, int steps = 10) {
    NetworkDims d;
    d.features = 3;
    d.hidden = 4;
    d.classes = classes;
    d.width = 5;
    d.weight_hidden = 4;
    d.steps = steps;
    return d;
}

/// Parameters with every entry drawn from N(0, scale²), so biases are live too.
inline ParamVector<double> randomized(ParamVector<double> p, std::uint64_t seed, double scale = 0.5) {
    CounterRng rng(seed);
    for (auto& v : p.values()) v = scale * rng.normal();
    return p;
}

inline std::vector<double> normals(std::size_t n, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("phasediff_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace phasediff::testing
