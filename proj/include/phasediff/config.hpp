#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "phasediff/data.hpp"
#include "phasediff/diffusion.hpp"
#include "phasediff/error.hpp"
#include "phasediff/eval.hpp"
#include "phasediff/meta_opt.hpp"
#include "phasediff/networks.hpp"

namespace phasediff {

struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct NetworkConfig {
    std::size_t hidden = 512;
    std::size_t width = 512;
    std::size_t weight_hidden = 100;
};

struct DataConfig {
    std::string corpus;          // manifest path; empty → generate from synth
    std::size_t videos = 20;     // synthetic video count
    SynthConfig synth;
    double label_dropout = 0.0;
    BackgroundMode background = BackgroundMode::context_only;
};

struct InferenceConfig {
    std::size_t trajectories = 100; // m
    int steps = 100;                // reverse steps (must divide T)
    DecisionRule rule = DecisionRule::majority_vote;
    std::string split = "test";
    bool save_trajectories = true;
};

struct EvalConfig {
    bool relaxed = false;
    PiwColumn piw_column = PiwColumn::true_class;
    double rho = 0.05;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "run";
    ScheduleConfig schedule;
    NetworkConfig network;
    TrainerConfig trainer;
    DataConfig data;
    InferenceConfig inference;
    EvalConfig eval;
    std::size_t checkpoint_every = 0; // 0: only the final checkpoint

    NetworkDims dims(std::size_t features, std::size_t classes) const {
        NetworkDims d{features, network.hidden, classes, network.width, network.weight_hidden, schedule.steps};
        d.validate();
        return d;
    }
    DiffusionSchedule make_schedule() const {
        return DiffusionSchedule(schedule.steps, schedule.beta_start, schedule.beta_end);
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError(section + ": unknown key '" + k + "'");
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    const auto& t = c.trainer;
    const auto& s = c.data.synth;
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [a, b] : s.overlap_pairs) pairs.push_back({a, b});
    nlohmann::json trainer{{"alpha", t.alpha},
                           {"beta", t.beta},
                           {"window", t.window},
                           {"meta_batch", t.meta_batch},
                           {"meta_context", t.meta_context},
                           {"meta_quota", t.meta_quota},
                           {"use_cdm", t.use_cdm},
                           {"use_mlo", t.use_mlo},
                           {"optimizer", to_string(t.optimizer)},
                           {"meta_optimizer", to_string(t.meta_optimizer)},
                           {"adam_beta1", t.adam_beta1},
                           {"adam_beta2", t.adam_beta2},
                           {"adam_eps", t.adam_eps},
                           {"pretrain_steps", t.pretrain_steps},
                           {"steps", t.steps},
                           {"divergence", t.divergence}};
    trainer["fixed_weight"] = t.fixed_weight ? nlohmann::json(*t.fixed_weight) : nlohmann::json(nullptr);
    return {{"seed", c.seed},
            {"out", c.out},
            {"checkpoint_every", c.checkpoint_every},
            {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
            {"network", {{"hidden", c.network.hidden}, {"width", c.network.width}, {"weight_hidden", c.network.weight_hidden}}},
            {"trainer", trainer},
            {"data",
             {{"corpus", c.data.corpus},
              {"videos", c.data.videos},
              {"label_dropout", c.data.label_dropout},
              {"background", to_string(c.data.background)},
              {"synth",
               {{"classes", s.classes},
                {"features", s.features},
                {"min_duration", s.min_duration},
                {"imbalance", s.imbalance},
                {"duration_jitter", s.duration_jitter},
                {"skip_prob", s.skip_prob},
                {"return_prob", s.return_prob},
                {"sigma", s.sigma},
                {"mean_scale", s.mean_scale},
                {"overlap_pairs", pairs},
                {"test_fraction", s.test_fraction},
                {"fps", s.fps}}}}},
            {"inference",
             {{"trajectories", c.inference.trajectories},
              {"steps", c.inference.steps},
              {"rule", c.inference.rule == DecisionRule::majority_vote ? "majority_vote" : "max_probability"},
              {"split", c.inference.split},
              {"save_trajectories", c.inference.save_trajectories}}},
            {"eval",
             {{"relaxed", c.eval.relaxed},
              {"piw_column", c.eval.piw_column == PiwColumn::true_class ? "true" : "predicted"},
              {"rho", c.eval.rho}}}};
}

/// Overlays `j` onto `c`. Unknown keys anywhere are rejected.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read;
    check_keys(j, "config", {"seed", "out", "checkpoint_every", "schedule", "network", "trainer", "data", "inference", "eval"});
    read(j, "seed", c.seed, "config");
    read(j, "out", c.out, "config");
    read(j, "checkpoint_every", c.checkpoint_every, "config");
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        check_keys(s, "schedule", {"steps", "beta_start", "beta_end"});
        read(s, "steps", c.schedule.steps, "schedule");
        read(s, "beta_start", c.schedule.beta_start, "schedule");
        read(s, "beta_end", c.schedule.beta_end, "schedule");
    }
    if (j.contains("network")) {
        const auto& s = j["network"];
        check_keys(s, "network", {"hidden", "width", "weight_hidden"});
        read(s, "hidden", c.network.hidden, "network");
        read(s, "width", c.network.width, "network");
        read(s, "weight_hidden", c.network.weight_hidden, "network");
    }
    if (j.contains("trainer")) {
        const auto& s = j["trainer"];
        auto& t = c.trainer;
        check_keys(s, "trainer", {"alpha", "beta", "window", "meta_batch", "meta_context", "meta_quota", "use_cdm",
                                  "use_mlo", "optimizer", "meta_optimizer", "adam_beta1", "adam_beta2", "adam_eps",
                                  "pretrain_steps", "steps", "divergence", "fixed_weight"});
        read(s, "alpha", t.alpha, "trainer");
        read(s, "beta", t.beta, "trainer");
        read(s, "window", t.window, "trainer");
        read(s, "meta_batch", t.meta_batch, "trainer");
        read(s, "meta_context", t.meta_context, "trainer");
        read(s, "meta_quota", t.meta_quota, "trainer");
        read(s, "use_cdm", t.use_cdm, "trainer");
        read(s, "use_mlo", t.use_mlo, "trainer");
        read(s, "adam_beta1", t.adam_beta1, "trainer");
        read(s, "adam_beta2", t.adam_beta2, "trainer");
        read(s, "adam_eps", t.adam_eps, "trainer");
        read(s, "pretrain_steps", t.pretrain_steps, "trainer");
        read(s, "steps", t.steps, "trainer");
        read(s, "divergence", t.divergence, "trainer");
        if (s.contains("optimizer")) t.optimizer = optimizer_from_string(s["optimizer"].get<std::string>());
        if (s.contains("meta_optimizer")) t.meta_optimizer = optimizer_from_string(s["meta_optimizer"].get<std::string>());
        if (s.contains("fixed_weight")) {
            if (s["fixed_weight"].is_null())
                t.fixed_weight.reset();
            else
                t.fixed_weight = s["fixed_weight"].get<double>();
        }
    }
    if (j.contains("data")) {
        const auto& s = j["data"];
        check_keys(s, "data", {"corpus", "videos", "label_dropout", "background", "synth"});
        read(s, "corpus", c.data.corpus, "data");
        read(s, "videos", c.data.videos, "data");
        read(s, "label_dropout", c.data.label_dropout, "data");
        if (s.contains("background")) c.data.background = background_mode_from_string(s["background"].get<std::string>());
        if (s.contains("synth")) {
            const auto& y = s["synth"];
            auto& g = c.data.synth;
            check_keys(y, "data.synth", {"classes", "features", "min_duration", "imbalance", "duration_jitter", "skip_prob",
                                         "return_prob", "sigma", "mean_scale", "overlap_pairs", "test_fraction", "fps"});
            read(y, "classes", g.classes, "data.synth");
            read(y, "features", g.features, "data.synth");
            read(y, "min_duration", g.min_duration, "data.synth");
            read(y, "imbalance", g.imbalance, "data.synth");
            read(y, "duration_jitter", g.duration_jitter, "data.synth");
            read(y, "skip_prob", g.skip_prob, "data.synth");
            read(y, "return_prob", g.return_prob, "data.synth");
            read(y, "sigma", g.sigma, "data.synth");
            read(y, "mean_scale", g.mean_scale, "data.synth");
            read(y, "test_fraction", g.test_fraction, "data.synth");
            read(y, "fps", g.fps, "data.synth");
            if (y.contains("overlap_pairs")) {
                g.overlap_pairs.clear();
                for (const auto& p : y["overlap_pairs"]) {
                    if (!p.is_array() || p.size() != 2) throw ConfigError("data.synth.overlap_pairs: expected [a, b] pairs");
                    g.overlap_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
                }
            }
        }
    }
    if (j.contains("inference")) {
        const auto& s = j["inference"];
        check_keys(s, "inference", {"trajectories", "steps", "rule", "split", "save_trajectories"});
        read(s, "trajectories", c.inference.trajectories, "inference");
        read(s, "steps", c.inference.steps, "inference");
        read(s, "split", c.inference.split, "inference");
        read(s, "save_trajectories", c.inference.save_trajectories, "inference");
        if (s.contains("rule")) {
            const auto r = s["rule"].get<std::string>();
            if (r == "majority_vote")
                c.inference.rule = DecisionRule::majority_vote;
            else if (r == "max_probability")
                c.inference.rule = DecisionRule::max_probability;
            else
                throw ConfigError("inference.rule: unknown rule '" + r + "'");
        }
    }
    if (j.contains("eval")) {
        const auto& s = j["eval"];
        check_keys(s, "eval", {"relaxed", "piw_column", "rho"});
        read(s, "relaxed", c.eval.relaxed, "eval");
        read(s, "rho", c.eval.rho, "eval");
        if (s.contains("piw_column")) {
            const auto r = s["piw_column"].get<std::string>();
            if (r == "true")
                c.eval.piw_column = PiwColumn::true_class;
            else if (r == "predicted")
                c.eval.piw_column = PiwColumn::predicted_class;
            else
                throw ConfigError("eval.piw_column: expected 'true' or 'predicted'");
        }
    }
}

inline void validate(const RunConfig& c) {
    DiffusionSchedule(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
    c.trainer.validate();
    c.data.synth.validate();
    if (c.data.label_dropout < 0 || c.data.label_dropout > 1) throw ConfigError("data.label_dropout must be in [0,1]");
    if (c.network.hidden == 0 || c.network.width == 0 || c.network.weight_hidden == 0)
        throw ConfigError("network: widths must be positive");
    if (c.inference.trajectories == 0) throw ConfigError("inference.trajectories must be >= 1");
    if (c.inference.steps < 1 || c.schedule.steps % c.inference.steps != 0)
        throw ConfigError("inference.steps=" + std::to_string(c.inference.steps) + " must divide schedule.steps=" +
                          std::to_string(c.schedule.steps));
    if (!(c.eval.rho > 0 && c.eval.rho < 1)) throw ConfigError("eval.rho must be in (0,1)");
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    apply_json(c, j);
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace phasediff
