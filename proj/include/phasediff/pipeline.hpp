#pragma once

#include <chrono>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasediff/checkpoint.hpp"
#include "phasediff/config.hpp"
#include "phasediff/data.hpp"
#include "phasediff/diffusion.hpp"
#include "phasediff/eval.hpp"
#include "phasediff/meta_opt.hpp"
#include "phasediff/networks.hpp"

#ifndef PHASEDIFF_BUILD_ID
#define PHASEDIFF_BUILD_ID "unknown"
#endif

namespace phasediff {

inline constexpr const char* kBuildId = PHASEDIFF_BUILD_ID;

/// 64-bit FNV-1a; keys per-video random streams by name, not position.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= std::uint8_t(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// The corpus a run works on: loaded from disk or generated, with label
/// dropout applied to the training split and the background mode to both.
inline Dataset prepare_dataset(const RunConfig& cfg) {
    Dataset ds;
    if (!cfg.data.corpus.empty()) {
        ds = load_corpus(cfg.data.corpus);
    } else {
        auto synth = cfg.data.synth;
        synth.seed = cfg.seed;
        ds = make_dataset(synth, cfg.data.videos);
    }
    if (cfg.data.label_dropout > 0) {
        auto train = apply_label_dropout(ds.split("train"), cfg.data.label_dropout, stream_key(cfg.seed, {0x1Du}));
        auto test = ds.split("test");
        ds.videos = std::move(train.videos);
        ds.videos.insert(ds.videos.end(), test.videos.begin(), test.videos.end());
    }
    return apply_background_mode(std::move(ds), cfg.data.background);
}

inline TrainerConfig trainer_config(const RunConfig& cfg) {
    auto t = cfg.trainer;
    t.seed = cfg.seed;
    return t;
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, const NetworkDims& dims, ModelState<double> state) {
    return {kCheckpointVersion, cfg.make_schedule().descriptor(), dims, std::move(state), cfg.seed, to_json(cfg)};
}

/// Trains from `resume` (or a fresh state) until the configured step count.
/// When `out` is given, writes train_log.jsonl, timing.jsonl, periodic
/// checkpoints and checkpoint.bin there.
inline ModelState<double> run_training(const RunConfig& cfg, const Dataset& ds,
                                       std::optional<ModelState<double>> resume = std::nullopt,
                                       const std::optional<std::filesystem::path>& out = std::nullopt) {
    const auto train = ds.split("train");
    if (train.videos.empty()) throw DataError("train: corpus has no training videos");
    const auto dims = cfg.dims(ds.features, ds.classes);
    const auto schedule = cfg.make_schedule();
    const auto tcfg = trainer_config(cfg);
    const auto meta = build_meta_set(train, tcfg.meta_quota, stream_key(cfg.seed, {0x3E7Au}));
    auto state = resume ? std::move(*resume) : initial_state<double>(dims, cfg.seed);
    if (state.theta.size() != make_model_params<double>(dims, 0).size())
        throw ConfigError("train: checkpoint layout does not match the configured network");
    if (!out) return phasediff::train(std::move(state), tcfg, schedule, train, meta);

    std::filesystem::create_directories(*out);
    const auto mode = state.step ? std::ios::app : std::ios::trunc;
    std::ofstream log(*out / "train_log.jsonl", mode), timing(*out / "timing.jsonl", mode);
    if (!log || !timing) throw IoError("cannot write logs under " + out->string());
    auto on_step = [&](const ModelState<double>& s) {
        if (cfg.checkpoint_every && s.step % cfg.checkpoint_every == 0)
            save_checkpoint(make_checkpoint(cfg, dims, s), *out / ("checkpoint_" + std::to_string(s.step) + ".bin"));
    };
    state = phasediff::train(std::move(state), tcfg, schedule, train, meta, &log, &timing, on_step);
    save_checkpoint(make_checkpoint(cfg, dims, state), *out / "checkpoint.bin");
    return state;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct VideoPrediction {
    std::string id;
    std::vector<int> labels;
    std::vector<int> predicted;
    std::vector<std::vector<double>> probs;       // per frame: mean trajectory probabilities, or z
    std::vector<TrajectorySet<double>> trajectories; // empty when the diffusion head is off
    std::vector<double> frame_ms;
};

/// Streams a video through the encoder frame by frame. With the diffusion
/// head on, each frame runs m reverse trajectories conditioned on its z;
/// otherwise the prediction is argmax z.
inline VideoPrediction infer_video(const ModelState<double>& state, const DiffusionSchedule& schedule,
                                   const PhaseSequence& video, const InferenceConfig& icfg, bool use_cdm,
                                   std::uint64_t seed, bool keep_trajectories = true) {
    const ConditionEncoder<double> enc(state.theta);
    if (video.features != enc.features())
        throw DataError("infer: video " + video.id + " has " + std::to_string(video.features) +
                        " features, model expects " + std::to_string(enc.features()));
    const NoisePredictor<double> np(state.theta, schedule.steps());
    const auto plan = use_cdm ? reverse_plan(schedule, icfg.steps) : std::vector<ReverseStep>{};
    VideoPrediction out;
    out.id = video.id;
    out.labels = video.labels;
    auto h = enc.initial_state();
    for (std::size_t f = 0; f < video.length(); ++f) {
        const auto start = std::chrono::steady_clock::now();
        enc.step(h, video.frame(f));
        auto z = enc.project(std::span<const double>(h));
        if (use_cdm) {
            auto ts = reverse_infer(plan, np, std::span<const double>(z), icfg.trajectories,
                                    FrameStreams{seed, fnv1a(video.id), f});
            auto agg = aggregate_prediction(ts, icfg.rule);
            out.predicted.push_back(int(agg.label));
            out.probs.push_back(std::move(agg.mean_probs));
            if (keep_trajectories) out.trajectories.push_back(std::move(ts));
        } else {
            out.predicted.push_back(int(argmax(std::span<const double>(z))));
            out.probs.push_back(std::move(z));
        }
        const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
        out.frame_ms.push_back(took.count());
    }
    return out;
}

inline void write_predictions_csv(const VideoPrediction& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const auto C = p.probs.empty() ? 0 : p.probs[0].size();
    out << "frame,label,predicted";
    for (std::size_t c = 0; c < C; ++c) out << ",p" << c;
    out << '\n';
    for (std::size_t f = 0; f < p.predicted.size(); ++f) {
        out << f << ',' << p.labels[f] << ',' << p.predicted[f];
        for (double v : p.probs[f]) out << ',' << format_double(v);
        out << '\n';
    }
}

/// Reads back (labels, predictions) from a predictions CSV.
inline std::pair<std::vector<int>, std::vector<int>> read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<int> labels, preds;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() < 3) throw DataError(path.string() + ":" + std::to_string(row) + ": expected frame,label,predicted");
        const auto where = path.string() + ":" + std::to_string(row);
        labels.push_back(detail::parse_int(cells[1], where));
        preds.push_back(detail::parse_int(cells[2], where));
    }
    return {labels, preds};
}

inline constexpr char kTrajMagic[8] = {'P', 'D', 'T', 'R', 'A', 'J', '0', '1'};

/// magic | u64 frames | u64 m | u64 C | frames x m x C little-endian binary64.
inline void write_trajectories(const std::vector<TrajectorySet<double>>& sets, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(kTrajMagic, kTrajMagic + 8);
    const auto m = sets.empty() ? 0 : sets[0].trajectories;
    const auto C = sets.empty() ? 0 : sets[0].classes;
    detail::put_u64(bytes, sets.size());
    detail::put_u64(bytes, m);
    detail::put_u64(bytes, C);
    for (const auto& s : sets) detail::put_doubles(bytes, s.values);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline std::vector<TrajectorySet<double>> read_trajectories(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 32 || std::memcmp(bytes.data(), kTrajMagic, 8) != 0)
        throw IoError(path.string() + ": not a trajectory file");
    const auto n = detail::get_u64(bytes.data() + 8), m = detail::get_u64(bytes.data() + 16),
               C = detail::get_u64(bytes.data() + 24);
    if (bytes.size() != 32 + n * m * C * 8) throw IoError(path.string() + ": size does not match header");
    std::vector<TrajectorySet<double>> out;
    for (std::size_t f = 0; f < n; ++f)
        out.push_back({m, C, detail::get_doubles(bytes.data() + 32 + f * m * C * 8, m * C), {}});
    return out;
}

/// Everything needed to re-create a run: config, build id, seed. Training
/// writes config.json / build_info.json; other commands prefix their name so
/// a shared output directory keeps every record.
inline void write_run_manifest(const RunConfig& cfg, const std::filesystem::path& dir, const std::string& command) {
    std::filesystem::create_directories(dir);
    const std::string prefix = command == "train" ? "" : command + "_";
    std::ofstream c(dir / (prefix + "config.json"));
    c << to_json(cfg).dump(2) << '\n';
    std::ofstream b(dir / (prefix + "build_info.json"));
    b << nlohmann::json{{"build_id", kBuildId}, {"command", command}, {"seed", cfg.seed}}.dump(2) << '\n';
    if (!c || !b) throw IoError("cannot write run manifest under " + dir.string());
}

} // namespace phasediff
