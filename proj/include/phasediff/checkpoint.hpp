#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasediff/error.hpp"
#include "phasediff/meta_opt.hpp"
#include "phasediff/networks.hpp"
#include "phasediff/numerics/param_vector.hpp"
#include "phasediff/schedule.hpp"

namespace phasediff {

inline constexpr char kCheckpointMagic[8] = {'P', 'D', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int version = kCheckpointVersion;
    ScheduleDescriptor schedule;
    NetworkDims dims;
    ModelState<double> state;
    std::uint64_t seed = 0;   // streams are keyed by (seed, step), so this plus state.step is the RNG cursor
    nlohmann::json config;    // the RunConfig that produced the state

    bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline void put_doubles(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    for (double d : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
}

inline std::vector<double> get_doubles(const std::uint8_t* p, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t(p[i * 8 + b]) << (8 * b);
        std::memcpy(&v[i], &bits, 8);
    }
    return v;
}

inline nlohmann::json layout_json(const ParamVector<double>& p) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : p.segments()) segs.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
    return segs;
}

inline ParamVector<double> layout_from_json(const nlohmann::json& segs) {
    ParamVector<double> p;
    for (const auto& s : segs) p.add(s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(), s.at("cols").get<std::size_t>());
    return p;
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t(p[b]) << (8 * b);
    return v;
}

} // namespace detail

/// magic | u64 header length | JSON header | little-endian binary64 block
/// (theta, w, then the four optimizer moment vectors).
inline std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& c) {
    const auto& s = c.state;
    nlohmann::json header{
        {"format", "phasediff-checkpoint"},
        {"version", c.version},
        {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
        {"dims",
         {{"features", c.dims.features},
          {"hidden", c.dims.hidden},
          {"classes", c.dims.classes},
          {"width", c.dims.width},
          {"weight_hidden", c.dims.weight_hidden},
          {"steps", c.dims.steps}}},
        {"step", s.step},
        {"seed", c.seed},
        {"theta", detail::layout_json(s.theta)},
        {"w", detail::layout_json(s.w)},
        {"theta_opt", {{"t", s.theta_opt.t}, {"size", s.theta_opt.m.size()}}},
        {"w_opt", {{"t", s.w_opt.t}, {"size", s.w_opt.m.size()}}},
        {"config", c.config}};
    const auto text = header.dump();
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
    detail::put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    detail::put_doubles(out, s.theta.values());
    detail::put_doubles(out, s.w.values());
    for (const auto* v : {&s.theta_opt.m, &s.theta_opt.v, &s.w_opt.m, &s.w_opt.v}) detail::put_doubles(out, *v);
    return out;
}

inline Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes, const std::string& where = "checkpoint") {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw IoError(where + ": not a checkpoint file");
    const auto hlen = detail::get_u64(bytes.data() + 8);
    if (hlen > bytes.size() - 16) throw IoError(where + ": truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + long(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": bad header: " + e.what());
    }
    Checkpoint c;
    c.version = h.at("version").get<int>();
    if (c.version != kCheckpointVersion)
        throw IoError(where + ": checkpoint version " + std::to_string(c.version) + ", this build reads " +
                      std::to_string(kCheckpointVersion));
    const auto& sc = h.at("schedule");
    c.schedule = {sc.at("steps").get<int>(), sc.at("beta_start").get<double>(), sc.at("beta_end").get<double>()};
    const auto& d = h.at("dims");
    c.dims = {d.at("features").get<std::size_t>(), d.at("hidden").get<std::size_t>(), d.at("classes").get<std::size_t>(),
              d.at("width").get<std::size_t>(), d.at("weight_hidden").get<std::size_t>(), d.at("steps").get<int>()};
    c.seed = h.at("seed").get<std::uint64_t>();
    c.config = h.at("config");
    auto& s = c.state;
    s.step = h.at("step").get<std::uint64_t>();
    s.theta = detail::layout_from_json(h.at("theta"));
    s.w = detail::layout_from_json(h.at("w"));
    s.theta_opt.t = h.at("theta_opt").at("t").get<std::uint64_t>();
    s.w_opt.t = h.at("w_opt").at("t").get<std::uint64_t>();
    const auto to = h.at("theta_opt").at("size").get<std::size_t>();
    const auto wo = h.at("w_opt").at("size").get<std::size_t>();
    const std::size_t total = s.theta.size() + s.w.size() + 2 * to + 2 * wo;
    if (bytes.size() != 16 + hlen + 8 * total)
        throw IoError(where + ": parameter block has " + std::to_string(bytes.size() - 16 - hlen) + " bytes, header implies " +
                      std::to_string(8 * total));
    const auto* p = bytes.data() + 16 + hlen;
    auto take = [&](std::size_t n) {
        auto v = detail::get_doubles(p, n);
        p += 8 * n;
        return v;
    };
    s.theta = s.theta.with_values(take(s.theta.size()));
    s.w = s.w.with_values(take(s.w.size()));
    s.theta_opt.m = take(to);
    s.theta_opt.v = take(to);
    s.w_opt.m = take(wo);
    s.w_opt.v = take(wo);
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const auto bytes = checkpoint_bytes(c);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        if (!out) throw IoError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return checkpoint_from_bytes(bytes, path.string());
}

} // namespace phasediff
