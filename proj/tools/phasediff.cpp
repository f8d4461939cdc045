// phasediff command-line front end: gen-data, train, infer, eval,
// uncertainty, ablate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "phasediff/phasediff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phasediff;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "RunConfig JSON file");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--seed", c.seed, "master seed");
    app->add_option("--set", c.overrides, "override a config field, e.g. trainer.steps=200")->take_all();
}

/// "a.b.c=v" → {"a":{"b":{"c":v}}}; v is parsed as JSON when possible.
json override_json(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + spec + "'");
    json value;
    try {
        value = json::parse(spec.substr(eq + 1));
    } catch (const json::exception&) {
        value = spec.substr(eq + 1);
    }
    std::vector<std::string> keys;
    std::stringstream ss(spec.substr(0, eq));
    for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) value = json{{*it, value}};
    return value;
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config);
    for (const auto& o : c.overrides) apply_json(cfg, override_json(o));
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    validate(cfg);
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Mean visit length per phase and the longest/shortest ratio.
json generation_summary(const Dataset& ds) {
    std::vector<double> total(ds.classes, 0), visits(ds.classes, 0);
    for (const auto& v : ds.videos) {
        const auto bands = export_ribbon(v.labels);
        for (const auto& b : bands)
            if (b.phase >= 0) {
                total[std::size_t(b.phase)] += double(b.length);
                visits[std::size_t(b.phase)] += 1;
            }
    }
    std::vector<double> mean(ds.classes, 0);
    double lo = 1e300, hi = 0;
    for (std::size_t c = 0; c < ds.classes; ++c) {
        if (visits[c] == 0) continue;
        mean[c] = total[c] / visits[c];
        lo = std::min(lo, mean[c]);
        hi = std::max(hi, mean[c]);
    }
    return {{"videos", ds.videos.size()},
            {"classes", ds.classes},
            {"features", ds.features},
            {"frames", ds.class_counts()},
            {"mean_visit_length", mean},
            {"imbalance_ratio", lo > 0 && lo < 1e300 ? hi / lo : 0.0}};
}

int cmd_gen_data(const Common& c) {
    auto cfg = resolve(c);
    const fs::path out = cfg.out;
    auto synth = cfg.data.synth;
    synth.seed = cfg.seed;
    const auto ds = make_dataset(synth, cfg.data.videos);
    write_corpus(ds, out);
    write_run_manifest(cfg, out, "gen-data");
    const auto summary = generation_summary(ds);
    write_json(out / "summary.json", summary);
    std::cout << summary.dump() << '\n';
    return 0;
}

void write_weight_samples(const ModelState<double>& st, const RunConfig& cfg, const Dataset& ds, const fs::path& path) {
    const auto samples = frame_weight_samples(st, trainer_config(cfg), cfg.make_schedule(), ds.split("train"));
    std::ofstream out(path);
    out << "video,frame,phase,loss,weight\n";
    for (const auto& s : samples)
        out << s.video << ',' << s.frame << ',' << s.label << ',' << format_double(s.loss) << ',' << format_double(s.weight)
            << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

ModelState<double> train_into(const RunConfig& cfg, const Dataset& ds, const fs::path& out,
                              std::optional<ModelState<double>> resume) {
    write_run_manifest(cfg, out, "train");
    auto st = run_training(cfg, ds, std::move(resume), out);
    write_weight_samples(st, cfg, ds, out / "weights.csv");
    return st;
}

struct InferSummary {
    MetricsReport metrics;
    std::optional<UncertaintyReport> uncertainty;
};

/// Runs inference over a split into `out` and returns the metrics.
InferSummary infer_into(const ModelState<double>& st, const RunConfig& cfg, const Dataset& ds, const fs::path& out,
                        bool save_outputs) {
    const auto split = ds.split(cfg.inference.split);
    if (split.videos.empty()) throw DataError("infer: split '" + cfg.inference.split + "' is empty");
    const ConditionEncoder<double> enc(st.theta);
    if (enc.classes() != ds.classes)
        throw DataError("infer: corpus has " + std::to_string(ds.classes) + " classes, checkpoint has " +
                        std::to_string(enc.classes()));
    const auto schedule = cfg.make_schedule();
    const bool cdm = cfg.trainer.use_cdm;
    if (save_outputs) {
        fs::create_directories(out / "predictions");
        if (cdm && cfg.inference.save_trajectories) fs::create_directories(out / "trajectories");
    }
    std::ofstream timing, ribbons;
    if (save_outputs) {
        timing.open(out / "infer_timing.jsonl");
        ribbons.open(out / "ribbons.csv");
        ribbons << "video,source,phase,start,length\n";
    }
    std::vector<std::vector<int>> P, L;
    std::vector<FrameSummary> frames;
    for (const auto& video : split.videos) {
        auto pred = infer_video(st, schedule, video, cfg.inference, cdm, cfg.seed, true);
        P.push_back(pred.predicted);
        L.push_back(pred.labels);
        for (std::size_t f = 0; f < pred.trajectories.size(); ++f)
            if (pred.labels[f] >= 0 && std::size_t(pred.labels[f]) < ds.classes)
                frames.push_back(summarize_frame(pred.trajectories[f], pred.labels[f], cfg.inference.rule, cfg.eval.rho));
        if (!save_outputs) continue;
        write_predictions_csv(pred, out / "predictions" / (video.id + ".csv"));
        if (cdm && cfg.inference.save_trajectories)
            write_trajectories(pred.trajectories, out / "trajectories" / (video.id + ".traj"));
        for (std::size_t f = 0; f < pred.frame_ms.size(); ++f)
            timing << json{{"video", video.id}, {"frame", f}, {"wall_ms", pred.frame_ms[f]}}.dump() << '\n';
        for (const auto& [name, seq] : {std::pair{"truth", &pred.labels}, std::pair{"predicted", &pred.predicted}})
            for (const auto& b : export_ribbon(*seq))
                ribbons << video.id << ',' << name << ',' << b.phase << ',' << b.start << ',' << b.length << '\n';
    }
    InferSummary s{frame_metrics(P, L, ds.classes, cfg.eval.relaxed, ds.fps), std::nullopt};
    if (cdm) s.uncertainty = uncertainty_report(std::span<const FrameSummary>(frames), ds.classes, cfg.eval.piw_column);
    if (save_outputs)
        write_json(out / "infer_info.json", {{"classes", ds.classes},
                                             {"fps", ds.fps},
                                             {"use_cdm", cdm},
                                             {"trajectories", cfg.inference.trajectories},
                                             {"steps", cfg.inference.steps},
                                             {"split", cfg.inference.split},
                                             {"videos", split.videos.size()}});
    return s;
}

int cmd_train(const Common& c, const std::string& resume, const std::vector<double>& sweep) {
    auto cfg = resolve(c);
    const fs::path out = cfg.out;
    std::optional<ModelState<double>> start;
    if (!resume.empty()) {
        auto ck = load_checkpoint(resume);
        if (ck.schedule != cfg.make_schedule().descriptor())
            throw ConfigError("train: checkpoint schedule differs from the configured one");
        start = std::move(ck.state);
    }
    if (sweep.empty()) {
        const auto ds = prepare_dataset(cfg);
        const auto st = train_into(cfg, ds, out, std::move(start));
        std::cout << json{{"checkpoint", (out / "checkpoint.bin").string()}, {"step", st.step}}.dump() << '\n';
        return 0;
    }
    json rows = json::array();
    for (double g : sweep) {
        auto run = cfg;
        run.data.label_dropout = g;
        char name[32];
        std::snprintf(name, sizeof name, "dropout_%.2f", g);
        run.out = (out / name).string();
        const auto ds = prepare_dataset(run);
        const auto st = train_into(run, ds, run.out, std::nullopt);
        const auto s = infer_into(st, run, ds, run.out, false);
        rows.push_back({{"label_dropout", g}, {"metrics", to_json(s.metrics)}});
    }
    write_run_manifest(cfg, out, "train");
    write_json(out / "sweep.json", rows);
    std::cout << rows.dump() << '\n';
    return 0;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& corpus) {
    if (checkpoint.empty()) throw ConfigError("infer: --checkpoint is required");
    auto ck = load_checkpoint(checkpoint);
    auto cfg = config_from_json(ck.config);
    if (!c.config.empty()) cfg = load_config(c.config);
    for (const auto& o : c.overrides) apply_json(cfg, override_json(o));
    if (c.seed) cfg.seed = *c.seed;
    cfg.out = c.out.empty() ? cfg.out : c.out;
    if (!corpus.empty()) cfg.data.corpus = corpus;
    validate(cfg);
    if (ck.schedule != cfg.make_schedule().descriptor()) throw ConfigError("infer: checkpoint schedule differs from the config");
    const auto ds = prepare_dataset(cfg);
    const fs::path out = cfg.out;
    write_run_manifest(cfg, out, "infer");
    const auto s = infer_into(ck.state, cfg, ds, out, true);
    write_json(out / "metrics.json", to_json(s.metrics));
    if (s.uncertainty) write_json(out / "uncertainty.json", to_json(*s.uncertainty));
    write_text(std::cout, s.metrics);
    if (cfg.trainer.use_cdm && cfg.inference.trajectories < 2)
        std::cout << "note: m=1, PIW and t-test are not reported\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& run, bool relaxed) {
    if (run.empty()) throw ConfigError("eval: --run <inference output directory> is required");
    const fs::path dir = run;
    const auto info = read_json(dir / "infer_info.json");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "predictions"))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("eval: no prediction files under " + (dir / "predictions").string());
    std::vector<std::vector<int>> P, L;
    for (const auto& f : files) {
        auto [labels, preds] = read_predictions_csv(f);
        L.push_back(std::move(labels));
        P.push_back(std::move(preds));
    }
    const auto report = frame_metrics(P, L, info.at("classes").get<std::size_t>(), relaxed, info.at("fps").get<double>());
    const fs::path out = c.out.empty() ? dir : fs::path(c.out);
    fs::create_directories(out);
    const std::string stem = relaxed ? "metrics_relaxed" : "metrics_strict";
    write_json(out / (stem + ".json"), to_json(report));
    std::ofstream txt(out / (stem + ".txt"));
    write_text(txt, report);
    write_text(std::cout, report);
    return 0;
}

int cmd_uncertainty(const Common& c, const std::string& run, const std::string& column, double rho) {
    if (run.empty()) throw ConfigError("uncertainty: --run <inference output directory> is required");
    const fs::path dir = run;
    const auto info = read_json(dir / "infer_info.json");
    const auto classes = info.at("classes").get<std::size_t>();
    if (!info.at("use_cdm").get<bool>()) throw ConfigError("uncertainty: the run has no diffusion trajectories");
    PiwColumn col = PiwColumn::true_class;
    if (column == "predicted")
        col = PiwColumn::predicted_class;
    else if (column != "true")
        throw ConfigError("uncertainty: --piw-column must be 'true' or 'predicted'");
    std::vector<FrameSummary> frames;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "trajectories"))
        if (e.path().extension() == ".traj") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("uncertainty: no trajectory files under " + (dir / "trajectories").string());
    for (const auto& f : files) {
        const auto sets = read_trajectories(f);
        const auto [labels, preds] = read_predictions_csv(dir / "predictions" / (f.stem().string() + ".csv"));
        if (labels.size() != sets.size())
            throw ShapeError("uncertainty: " + f.string() + " has " + std::to_string(sets.size()) + " frames, labels have " +
                             std::to_string(labels.size()));
        for (std::size_t i = 0; i < sets.size(); ++i)
            if (labels[i] >= 0 && std::size_t(labels[i]) < classes)
                frames.push_back(summarize_frame(sets[i], labels[i], DecisionRule::majority_vote, rho));
    }
    const auto report = uncertainty_report(std::span<const FrameSummary>(frames), classes, col);
    const fs::path out = c.out.empty() ? dir : fs::path(c.out);
    fs::create_directories(out);
    write_json(out / "uncertainty.json", to_json(report));
    std::ofstream txt(out / "uncertainty.txt");
    write_text(txt, report);
    write_text(std::cout, report);
    return 0;
}

int cmd_ablate(const Common& c) {
    auto cfg = resolve(c);
    const fs::path out = cfg.out;
    write_run_manifest(cfg, out, "ablate");
    const auto ds = prepare_dataset(cfg);
    json rows = json::array();
    for (auto [cdm, mlo] : {std::pair{false, false}, std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
        auto run = cfg;
        run.trainer.use_cdm = cdm;
        run.trainer.use_mlo = mlo;
        const std::string name = std::string("cdm_") + (cdm ? "on" : "off") + "_mlo_" + (mlo ? "on" : "off");
        run.out = (out / name).string();
        const auto st = train_into(run, ds, run.out, std::nullopt);
        const auto s = infer_into(st, run, ds, run.out, true);
        write_json(fs::path(run.out) / "metrics.json", to_json(s.metrics));
        rows.push_back({{"variant", name},
                        {"use_cdm", cdm},
                        {"use_mlo", mlo},
                        {"accuracy", s.metrics.accuracy_mean},
                        {"accuracy_std", s.metrics.accuracy_std},
                        {"precision", s.metrics.precision},
                        {"recall", s.metrics.recall},
                        {"jaccard", s.metrics.jaccard}});
    }
    write_json(out / "ablation.json", rows);
    std::printf("%-20s %8s %8s %8s %8s\n", "variant", "Acc", "Pr", "Re", "Ja");
    for (const auto& r : rows)
        std::printf("%-20s %8.2f %8.2f %8.2f %8.2f\n", r["variant"].get<std::string>().c_str(),
                    100 * r["accuracy"].get<double>(), 100 * r["precision"].get<double>(),
                    100 * r["recall"].get<double>(), 100 * r["jaccard"].get<double>());
    return 0;
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"phasediff: online phase recognition with a classification diffusion head and meta-learned frame weights"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kBuildId));

    Common gen, train, infer, eval, unc, abl;
    auto* g = app.add_subcommand("gen-data", "generate a synthetic corpus");
    add_common(g, gen);

    std::string resume;
    std::vector<double> sweep;
    auto* t = app.add_subcommand("train", "train a model (pretrain, then joint phase)");
    add_common(t, train);
    t->add_option("--resume", resume, "checkpoint to continue from");
    t->add_option("--label-dropout-sweep", sweep, "train once per label-dropout fraction")->delimiter(',');

    std::string checkpoint, corpus;
    auto* i = app.add_subcommand("infer", "per-frame predictions and trajectories");
    add_common(i, infer);
    i->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    i->add_option("--corpus", corpus, "corpus manifest (defaults to the training config's)");

    std::string eval_run;
    bool relaxed = false;
    auto* e = app.add_subcommand("eval", "recognition metrics from an inference directory");
    add_common(e, eval);
    e->add_option("--run", eval_run, "inference output directory")->required();
    e->add_flag("--relaxed", relaxed, "forgive adjacent-phase predictions near transitions");

    std::string unc_run, column = "true";
    double rho = 0.05;
    auto* u = app.add_subcommand("uncertainty", "PIW / t-test report from an inference directory");
    add_common(u, unc);
    u->add_option("--run", unc_run, "inference output directory")->required();
    u->add_option("--piw-column", column, "true | predicted");
    u->add_option("--rho", rho, "t-test significance level");

    auto* a = app.add_subcommand("ablate", "train and evaluate the four toggle combinations");
    add_common(a, abl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForVersion& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        return fail("usage", ex.what(), 2);
    }

    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train(train, resume, sweep);
        if (*i) return cmd_infer(infer, checkpoint, corpus);
        if (*e) return cmd_eval(eval, eval_run, relaxed);
        if (*u) return cmd_uncertainty(unc, unc_run, column, rho);
        if (*a) return cmd_ablate(abl);
    } catch (const Error& ex) {
        return fail(ex.kind(), ex.what(), 1);
    } catch (const std::exception& ex) {
        return fail("internal", ex.what(), 1);
    }
    return 0;
}
