#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasediff/error.hpp"
#include "phasediff/numerics/rng.hpp"

namespace phasediff {

inline constexpr int kMasked = -1;

/// One video: L frames of D features plus per-frame labels (kMasked for
/// frames without a label).
struct PhaseSequence {
    std::string id;
    std::string split = "train";
    double fps = 1.0;
    std::size_t features = 0;
    std::vector<double> x;   // L x D, row-major
    std::vector<int> labels; // L

    std::size_t length() const noexcept { return labels.size(); }
    std::span<const double> frame(std::size_t i) const { return std::span<const double>(x).subspan(i * features, features); }
    bool operator==(const PhaseSequence&) const = default;
};

struct Dataset {
    std::size_t classes = 0;
    std::size_t features = 0;
    double fps = 1.0;
    std::vector<PhaseSequence> videos;

    Dataset split(const std::string& name) const {
        Dataset out{classes, features, fps, {}};
        for (const auto& v : videos)
            if (v.split == name) out.videos.push_back(v);
        return out;
    }

    std::size_t labeled_frames() const {
        std::size_t n = 0;
        for (const auto& v : videos) n += std::size_t(std::count_if(v.labels.begin(), v.labels.end(), [](int l) { return l >= 0; }));
        return n;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(classes, 0);
        for (const auto& v : videos)
            for (int l : v.labels)
                if (l >= 0) ++counts[std::size_t(l)];
        return counts;
    }

    bool operator==(const Dataset&) const = default;
};

enum class BackgroundMode { drop_frames, context_only, single_pseudo_label };

inline std::string to_string(BackgroundMode m) {
    switch (m) {
    case BackgroundMode::drop_frames: return "drop_frames";
    case BackgroundMode::context_only: return "context_only";
    case BackgroundMode::single_pseudo_label: return "single_pseudo_label";
    }
    return "?";
}

inline BackgroundMode background_mode_from_string(const std::string& s) {
    if (s == "drop_frames") return BackgroundMode::drop_frames;
    if (s == "context_only") return BackgroundMode::context_only;
    if (s == "single_pseudo_label") return BackgroundMode::single_pseudo_label;
    throw ConfigError("unknown background mode '" + s + "' (drop_frames|context_only|single_pseudo_label)");
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t classes = 7;
    std::size_t features = 16;
    double min_duration = 8.0;    // expected visit length of the shortest phase (frames)
    double imbalance = 10.0;      // longest / shortest expected duration
    double duration_jitter = 0.4; // visit length ~ d·U(1−j, 1+j)
    double skip_prob = 0.05;
    double return_prob = 0.05;
    double sigma = 2.0;           // shared spherical emitter scale
    double mean_scale = 1.0;      // emitter means ~ N(0, mean_scale²·I)
    std::vector<std::pair<int, int>> overlap_pairs{{1, 2}, {4, 5}};
    double test_fraction = 0.5;
    double fps = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw ConfigError("synth: need at least 2 classes, got " + std::to_string(classes));
        if (features == 0) throw ConfigError("synth: features must be positive");
        if (!(imbalance >= 1.0)) throw ConfigError("synth: imbalance ratio must be >= 1");
        if (!(sigma > 0.0)) throw ConfigError("synth: sigma must be positive");
        if (!(min_duration >= 1.0)) throw ConfigError("synth: min_duration must be >= 1");
        if (duration_jitter < 0.0 || duration_jitter >= 1.0) throw ConfigError("synth: duration_jitter must be in [0,1)");
        if (skip_prob < 0 || return_prob < 0 || skip_prob + return_prob >= 1.0)
            throw ConfigError("synth: skip/return probabilities must be non-negative and sum below 1");
        if (test_fraction < 0.0 || test_fraction >= 1.0) throw ConfigError("synth: test_fraction must be in [0,1)");
        for (auto [a, b] : overlap_pairs)
            if (a < 0 || b < 0 || std::size_t(a) >= classes || std::size_t(b) >= classes || a == b)
                throw ConfigError("synth: invalid overlap pair (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
};

/// Expected visit duration per phase: geometric between min_duration and
/// min_duration·imbalance, assigned to phases by a seeded permutation.
inline std::vector<double> expected_durations(const SynthConfig& cfg) {
    const auto C = cfg.classes;
    std::vector<std::size_t> rank(C);
    std::iota(rank.begin(), rank.end(), 0);
    CounterRng rng(stream_key(cfg.seed, {0xD0u}));
    for (std::size_t i = C - 1; i > 0; --i) std::swap(rank[i], rank[rng.uniform_int(0, i)]);
    std::vector<double> d(C);
    for (std::size_t c = 0; c < C; ++c)
        d[c] = cfg.min_duration * std::pow(cfg.imbalance, double(rank[c]) / double(C - 1));
    return d;
}

/// Per-phase emitter means. Overlap pairs (a, b) put μ_b at distance σ/2 from μ_a.
inline std::vector<std::vector<double>> emitter_means(const SynthConfig& cfg) {
    std::vector<std::vector<double>> mu(cfg.classes, std::vector<double>(cfg.features));
    CounterRng rng(stream_key(cfg.seed, {0xE0u}));
    for (auto& m : mu)
        for (auto& v : m) v = cfg.mean_scale * rng.normal();
    for (auto [a, b] : cfg.overlap_pairs) {
        std::vector<double> dir(cfg.features);
        double norm = 0;
        for (auto& v : dir) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < cfg.features; ++k)
            mu[std::size_t(b)][k] = mu[std::size_t(a)][k] + 0.5 * cfg.sigma * dir[k] / norm;
    }
    return mu;
}

/// Generates `count` videos. Phases advance along a mostly-forward chain
/// 0 → 1 → … → C−1 with occasional skips (c → c+2) and returns (c → c−1).
inline std::vector<PhaseSequence> generate(const SynthConfig& cfg, std::size_t count) {
    cfg.validate();
    const auto C = cfg.classes;
    const auto D = cfg.features;
    const auto durations = expected_durations(cfg);
    const auto mu = emitter_means(cfg);
    const auto test_count = static_cast<std::size_t>(std::llround(cfg.test_fraction * double(count)));
    std::vector<PhaseSequence> out;
    out.reserve(count);
    for (std::size_t v = 0; v < count; ++v) {
        CounterRng rng(stream_key(cfg.seed, {0xF0u, v}));
        PhaseSequence seq;
        char name[32];
        std::snprintf(name, sizeof name, "video_%03zu", v);
        seq.id = name;
        seq.split = v < count - test_count ? "train" : "test";
        seq.fps = cfg.fps;
        seq.features = D;
        std::size_t phase = 0;
        for (std::size_t visit = 0; visit < 4 * C; ++visit) {
            const double scale = 1.0 + cfg.duration_jitter * (2.0 * rng.uniform() - 1.0);
            const auto len = std::max<long>(1, std::lround(durations[phase] * scale));
            for (long f = 0; f < len; ++f) {
                seq.labels.push_back(int(phase));
                for (std::size_t k = 0; k < D; ++k) seq.x.push_back(mu[phase][k] + cfg.sigma * rng.normal());
            }
            const double u = rng.uniform();
            if (phase > 0 && u < cfg.return_prob) {
                --phase;
            } else if (phase + 2 < C && u < cfg.return_prob + cfg.skip_prob) {
                phase += 2;
            } else if (phase + 1 < C) {
                ++phase;
            } else {
                break;
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

inline Dataset make_dataset(const SynthConfig& cfg, std::size_t count) {
    return Dataset{cfg.classes, cfg.features, cfg.fps, generate(cfg, count)};
}

// ---------------------------------------------------------------------------
// Corpus files: JSON manifest + one CSV per video (`label,f0,...,f{D-1}`)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_corpus(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("write_corpus: cannot create " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json manifest;
    manifest["format"] = "phasediff-corpus";
    manifest["version"] = 1;
    manifest["classes"] = ds.classes;
    manifest["features"] = ds.features;
    manifest["fps"] = ds.fps;
    manifest["videos"] = nlohmann::ordered_json::array();
    for (const auto& v : ds.videos) {
        const auto file = v.id + ".csv";
        std::ofstream os(dir / file, std::ios::binary);
        if (!os) throw IoError("write_corpus: cannot write " + (dir / file).string());
        os << "label";
        for (std::size_t k = 0; k < ds.features; ++k) os << ",f" << k;
        os << '\n';
        for (std::size_t i = 0; i < v.length(); ++i) {
            os << v.labels[i];
            for (double f : v.frame(i)) os << ',' << format_double(f);
            os << '\n';
        }
        manifest["videos"].push_back({{"id", v.id}, {"file", file}, {"split", v.split}});
    }
    std::ofstream ms(dir / "manifest.json", std::ios::binary);
    if (!ms) throw IoError("write_corpus: cannot write manifest in " + dir.string());
    ms << manifest.dump(2) << '\n';
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
    std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v))
        throw DataError(where + ": '" + tmp + "' is not a finite number");
    return v;
}

inline int parse_int(std::string_view s, const std::string& where) {
    int v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw DataError(where + ": '" + std::string(s) + "' is not an integer label");
    return v;
}

} // namespace detail

inline PhaseSequence load_sequence_csv(const std::filesystem::path& path, std::size_t features, std::size_t classes) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_corpus: missing file " + path.string());
    PhaseSequence seq;
    seq.features = features;
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
    const auto header = detail::split_csv(line);
    if (header.size() != features + 1 || header[0] != "label")
        throw DataError(path.string() + " row 1: header has " + std::to_string(header.size() ? header.size() - 1 : 0) +
                        " feature columns, manifest declares D=" + std::to_string(features));
    for (std::size_t k = 0; k < features; ++k)
        if (header[k + 1] != "f" + std::to_string(k))
            throw DataError(path.string() + " row 1: column " + std::to_string(k + 2) + " should be f" + std::to_string(k));
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        const auto where = path.string() + " row " + std::to_string(row);
        const auto cells = detail::split_csv(line);
        if (cells.size() != features + 1)
            throw DataError(where + ": " + std::to_string(cells.size()) + " fields, expected " + std::to_string(features + 1));
        const int label = detail::parse_int(cells[0], where);
        if (label < kMasked || label >= int(classes))
            throw DataError(where + ": label " + std::to_string(label) + " outside [-1, " + std::to_string(classes) + ")");
        seq.labels.push_back(label);
        for (std::size_t k = 0; k < features; ++k) seq.x.push_back(detail::parse_double(cells[k + 1], where));
    }
    if (seq.labels.empty()) throw DataError(path.string() + ": no frames");
    return seq;
}

inline Dataset load_corpus(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("load_corpus: missing manifest " + manifest_path.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!m.contains(key)) throw DataError(manifest_path.string() + ": missing key '" + key + "'");
        return m.at(key);
    };
    if (need("format") != "phasediff-corpus" || need("version") != 1)
        throw DataError(manifest_path.string() + ": unsupported corpus format/version");
    Dataset ds;
    ds.classes = need("classes").get<std::size_t>();
    ds.features = need("features").get<std::size_t>();
    ds.fps = need("fps").get<double>();
    if (ds.classes < 2 || ds.features == 0 || !(ds.fps > 0))
        throw DataError(manifest_path.string() + ": classes >= 2, features > 0 and fps > 0 required");
    const auto base = manifest_path.parent_path();
    for (const auto& entry : need("videos")) {
        auto seq = load_sequence_csv(base / entry.at("file").get<std::string>(), ds.features, ds.classes);
        seq.id = entry.at("id").get<std::string>();
        seq.split = entry.value("split", "train");
        seq.fps = ds.fps;
        ds.videos.push_back(std::move(seq));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Meta set, label dropout, background modes
// ---------------------------------------------------------------------------

struct FrameRef {
    std::size_t video = 0;
    std::size_t frame = 0;
    int label = 0;
    bool operator==(const FrameRef&) const = default;
};

struct MetaSet {
    std::vector<FrameRef> frames;        // grouped by class, ascending
    std::vector<bool> exhausted;         // class had fewer than quota frames
    std::vector<std::vector<std::size_t>> by_class; // indices into frames
};

/// Balanced meta set: min(quota, available) frames per class drawn without
/// replacement.
inline MetaSet build_meta_set(const Dataset& train, std::size_t quota, std::uint64_t seed) {
    std::vector<std::vector<FrameRef>> pool(train.classes);
    for (std::size_t v = 0; v < train.videos.size(); ++v)
        for (std::size_t f = 0; f < train.videos[v].length(); ++f)
            if (const int l = train.videos[v].labels[f]; l >= 0) pool[std::size_t(l)].push_back({v, f, l});
    std::string empty;
    for (std::size_t c = 0; c < train.classes; ++c)
        if (pool[c].empty()) empty += (empty.empty() ? "" : ",") + std::to_string(c);
    if (!empty.empty()) throw DataError("build_meta_set: no labeled frames for class(es) " + empty);
    MetaSet out;
    out.exhausted.assign(train.classes, false);
    out.by_class.resize(train.classes);
    for (std::size_t c = 0; c < train.classes; ++c) {
        auto& p = pool[c];
        const auto take = std::min(quota, p.size());
        out.exhausted[c] = p.size() < quota;
        CounterRng rng(stream_key(seed, {0x3E7Au, c}));
        for (std::size_t i = 0; i < take; ++i) std::swap(p[i], p[rng.uniform_int(i, p.size() - 1)]);
        for (std::size_t i = 0; i < take; ++i) {
            out.by_class[c].push_back(out.frames.size());
            out.frames.push_back(p[i]);
        }
    }
    return out;
}

/// Masks exactly round(fraction · labeled) labels chosen uniformly at random.
inline Dataset apply_label_dropout(Dataset ds, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw RangeError("label dropout: fraction must be in [0,1]");
    std::vector<std::pair<std::size_t, std::size_t>> labeled;
    for (std::size_t v = 0; v < ds.videos.size(); ++v)
        for (std::size_t f = 0; f < ds.videos[v].length(); ++f)
            if (ds.videos[v].labels[f] >= 0) labeled.emplace_back(v, f);
    const auto k = static_cast<std::size_t>(std::llround(fraction * double(labeled.size())));
    CounterRng rng(stream_key(seed, {0xD509u}));
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(labeled[i], labeled[rng.uniform_int(i, labeled.size() - 1)]);
        ds.videos[labeled[i].first].labels[labeled[i].second] = kMasked;
    }
    return ds;
}

/// drop_frames: masked frames leave the sequence entirely.
/// context_only: unchanged (masked frames feed the encoder, carry no loss).
/// single_pseudo_label: masked frames get the extra class id C.
inline Dataset apply_background_mode(Dataset ds, BackgroundMode mode) {
    switch (mode) {
    case BackgroundMode::context_only:
        break;
    case BackgroundMode::drop_frames: {
        std::vector<PhaseSequence> kept;
        for (auto& v : ds.videos) {
            PhaseSequence out = v;
            out.x.clear();
            out.labels.clear();
            for (std::size_t f = 0; f < v.length(); ++f) {
                if (v.labels[f] == kMasked) continue;
                out.labels.push_back(v.labels[f]);
                const auto fr = v.frame(f);
                out.x.insert(out.x.end(), fr.begin(), fr.end());
            }
            if (!out.labels.empty()) kept.push_back(std::move(out));
        }
        ds.videos = std::move(kept);
        break;
    }
    case BackgroundMode::single_pseudo_label:
        for (auto& v : ds.videos)
            for (auto& l : v.labels)
                if (l == kMasked) l = int(ds.classes);
        ds.classes += 1;
        break;
    }
    return ds;
}

} // namespace phasediff
