#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "phasediff/data.hpp"
#include "phasediff/diffusion.hpp"
#include "phasediff/error.hpp"

namespace phasediff {

// ---------------------------------------------------------------------------
// Recognition metrics
// ---------------------------------------------------------------------------

struct ClassScore {
    int phase = 0;
    double precision = 0;
    double recall = 0;
    double jaccard = 0;
};

struct VideoScore {
    double accuracy = 0;
    std::vector<ClassScore> classes; // phases present in ground truth or prediction
    double precision = 0, recall = 0, jaccard = 0;
};

struct MetricsReport {
    bool relaxed = false;
    std::vector<double> accuracy;   // per video
    double accuracy_mean = 0;
    double accuracy_std = 0;        // sample standard deviation over videos
    double precision = 0, recall = 0, jaccard = 0;
    std::vector<VideoScore> videos;
};

/// Predictions after applying the boundary tolerance: within `window` frames
/// before a ground-truth transition p → q a prediction of q counts as p, and
/// within `window` frames after it a prediction of p counts as q.
inline std::vector<int> relax_predictions(std::span<const int> preds, std::span<const int> labels, std::size_t window) {
    std::vector<int> out(preds.begin(), preds.end());
    const auto L = labels.size();
    for (std::size_t b = 1; b < L; ++b) {
        const int p = labels[b - 1], q = labels[b];
        if (p == q) continue;
        for (std::size_t i = b; i-- > (b > window ? b - window : 0);) {
            if (labels[i] != p) break;
            if (preds[i] == q) out[i] = p;
        }
        for (std::size_t i = b; i < std::min(L, b + window); ++i) {
            if (labels[i] != q) break;
            if (preds[i] == p) out[i] = q;
        }
    }
    return out;
}

/// Scores one video. Masked frames are dropped before scoring.
inline VideoScore score_video(std::span<const int> preds, std::span<const int> labels, std::size_t classes,
                              bool relaxed, double fps) {
    if (preds.size() != labels.size())
        throw ShapeError("frame_metrics: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    std::vector<int> p, l;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kMasked) continue;
        if (labels[i] < 0 || std::size_t(labels[i]) >= classes || preds[i] < 0 || std::size_t(preds[i]) >= classes)
            throw RangeError("frame_metrics: phase id outside [0, " + std::to_string(classes) + ") at frame " +
                             std::to_string(i));
        p.push_back(preds[i]);
        l.push_back(labels[i]);
    }
    if (l.empty()) throw DataError("frame_metrics: video has no labeled frames");
    if (relaxed) p = relax_predictions(p, l, std::size_t(std::llround(10.0 * fps)));
    VideoScore out;
    std::vector<std::size_t> tp(classes, 0), npred(classes, 0), ngt(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        ++npred[std::size_t(p[i])];
        ++ngt[std::size_t(l[i])];
        if (p[i] == l[i]) {
            ++tp[std::size_t(l[i])];
            ++correct;
        }
    }
    out.accuracy = double(correct) / double(l.size());
    for (std::size_t c = 0; c < classes; ++c) {
        if (npred[c] == 0 && ngt[c] == 0) continue;
        ClassScore s;
        s.phase = int(c);
        s.precision = npred[c] ? double(tp[c]) / double(npred[c]) : 0.0;
        s.recall = ngt[c] ? double(tp[c]) / double(ngt[c]) : 0.0;
        s.jaccard = double(tp[c]) / double(npred[c] + ngt[c] - tp[c]);
        out.precision += s.precision;
        out.recall += s.recall;
        out.jaccard += s.jaccard;
        out.classes.push_back(s);
    }
    const auto k = double(out.classes.size());
    out.precision /= k;
    out.recall /= k;
    out.jaccard /= k;
    return out;
}

inline MetricsReport frame_metrics(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& labels,
                                   std::size_t classes, bool relaxed, double fps) {
    if (preds.size() != labels.size())
        throw ShapeError("frame_metrics: " + std::to_string(preds.size()) + " prediction videos for " +
                         std::to_string(labels.size()) + " label videos");
    if (labels.empty()) throw DataError("frame_metrics: no videos");
    MetricsReport r;
    r.relaxed = relaxed;
    for (std::size_t v = 0; v < labels.size(); ++v) {
        r.videos.push_back(score_video(preds[v], labels[v], classes, relaxed, fps));
        const auto& s = r.videos.back();
        r.accuracy.push_back(s.accuracy);
        r.precision += s.precision;
        r.recall += s.recall;
        r.jaccard += s.jaccard;
    }
    const auto n = double(labels.size());
    r.precision /= n;
    r.recall /= n;
    r.jaccard /= n;
    for (auto a : r.accuracy) r.accuracy_mean += a;
    r.accuracy_mean /= n;
    if (labels.size() > 1) {
        double ss = 0;
        for (auto a : r.accuracy) ss += (a - r.accuracy_mean) * (a - r.accuracy_mean);
        r.accuracy_std = std::sqrt(ss / (n - 1));
    }
    return r;
}

// ---------------------------------------------------------------------------
// PIW and PTST
// ---------------------------------------------------------------------------

/// Quantile by sorted linear interpolation at position p·(m − 1).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    const double pos = p * double(sorted.size() - 1);
    const auto i = std::size_t(std::floor(pos));
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + (pos - double(i)) * (sorted[i + 1] - sorted[i]);
}

/// Width between the lo-th and hi-th percentiles of a sample.
inline double piw(std::span<const double> values, double lo = 2.5, double hi = 97.5) {
    if (values.size() < 2) throw RangeError("piw: need at least 2 values, got " + std::to_string(values.size()));
    if (!(0 <= lo && lo <= hi && hi <= 100)) throw RangeError("piw: need 0 <= lo <= hi <= 100");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    return quantile_sorted(s, hi / 100.0) - quantile_sorted(s, lo / 100.0);
}

struct PtstResult {
    double t = 0;
    double p = 1;
    bool rejected = false;
};

/// Two-sided p value of a t statistic with `dof` degrees of freedom.
inline double t_two_sided_p(double t, double dof) {
    if (std::isinf(t)) return 0.0;
    const boost::math::students_t dist(dof);
    return std::min(1.0, 2.0 * boost::math::cdf(dist, -std::abs(t)));
}

/// Paired t-test on top1_k − top2_k.
inline PtstResult ptst(std::span<const double> top1, std::span<const double> top2, double rho = 0.05) {
    if (top1.size() != top2.size()) throw ShapeError("ptst: samples must be paired");
    const auto m = top1.size();
    if (m < 2) throw RangeError("ptst: need at least 2 pairs, got " + std::to_string(m));
    double mean = 0;
    for (std::size_t k = 0; k < m; ++k) mean += top1[k] - top2[k];
    mean /= double(m);
    double ss = 0;
    for (std::size_t k = 0; k < m; ++k) {
        const double d = top1[k] - top2[k] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / double(m - 1));
    PtstResult r;
    if (sd == 0) {
        if (mean == 0) throw NumericError("ptst: zero differences (degenerate sample)");
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0;
        r.rejected = true;
        return r;
    }
    r.t = mean / (sd / std::sqrt(double(m)));
    r.p = t_two_sided_p(r.t, double(m - 1));
    r.rejected = r.p < rho;
    return r;
}

// ---------------------------------------------------------------------------
// Uncertainty report
// ---------------------------------------------------------------------------

enum class PiwColumn { true_class, predicted_class };

/// What the report needs from one frame's trajectories.
struct FrameSummary {
    int label = 0;
    int predicted = 0;
    std::optional<double> piw_true;
    std::optional<double> piw_predicted;
    std::optional<PtstResult> test;
};

template <class T>
FrameSummary summarize_frame(const TrajectorySet<T>& ts, int label, DecisionRule rule = DecisionRule::majority_vote,
                             double rho = 0.05) {
    const auto agg = aggregate_prediction(ts, rule);
    FrameSummary s;
    s.label = label;
    s.predicted = int(agg.label);
    if (ts.trajectories < 2) return s;
    std::vector<std::vector<double>> probs(ts.classes, std::vector<double>(ts.trajectories));
    for (std::size_t k = 0; k < ts.trajectories; ++k) {
        const auto p = softmax_row(ts.row(k));
        for (std::size_t c = 0; c < ts.classes; ++c) probs[c][k] = double(p[c]);
    }
    s.piw_true = piw(probs.at(std::size_t(label)));
    s.piw_predicted = piw(probs[std::size_t(s.predicted)]);
    std::vector<std::size_t> order(ts.classes);
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return agg.mean_probs[a] > agg.mean_probs[b]; });
    try {
        s.test = ptst(probs[order[0]], probs[order[1]], rho);
    } catch (const NumericError&) {
        s.test = PtstResult{0.0, 1.0, false};
    }
    return s;
}

struct UncertaintyRow {
    std::string name;
    std::size_t frames = 0;
    double accuracy = 0;
    std::size_t correct = 0, incorrect = 0;
    std::optional<double> piw_correct, piw_incorrect;
    std::size_t rejected = 0, not_rejected = 0;
    std::optional<double> acc_rejected, acc_not_rejected;
};

struct UncertaintyReport {
    std::vector<UncertaintyRow> rows; // one per phase, then "all"
    PiwColumn column = PiwColumn::true_class;
    std::string notice;
};

inline UncertaintyReport uncertainty_report(std::span<const FrameSummary> frames, std::size_t classes,
                                            PiwColumn column = PiwColumn::true_class) {
    UncertaintyReport r;
    r.column = column;
    struct Acc {
        std::size_t n = 0, correct = 0, rej = 0, rej_correct = 0, keep = 0, keep_correct = 0;
        std::size_t piw_c_n = 0, piw_i_n = 0;
        double piw_c = 0, piw_i = 0;
    };
    std::vector<Acc> acc(classes + 1);
    bool missing = false;
    for (const auto& f : frames) {
        if (f.label < 0 || std::size_t(f.label) >= classes)
            throw RangeError("uncertainty_report: label " + std::to_string(f.label) + " outside [0, " +
                             std::to_string(classes) + ")");
        const bool ok = f.label == f.predicted;
        const auto& w = column == PiwColumn::true_class ? f.piw_true : f.piw_predicted;
        for (auto* a : {&acc[std::size_t(f.label)], &acc[classes]}) {
            ++a->n;
            a->correct += ok;
            if (w) {
                if (ok) {
                    a->piw_c += *w;
                    ++a->piw_c_n;
                } else {
                    a->piw_i += *w;
                    ++a->piw_i_n;
                }
            }
            if (f.test) {
                if (f.test->rejected) {
                    ++a->rej;
                    a->rej_correct += ok;
                } else {
                    ++a->keep;
                    a->keep_correct += ok;
                }
            }
        }
        missing = missing || !w || !f.test;
    }
    if (missing) r.notice = "fewer than 2 trajectories for some frames: PIW and t-test omitted for them";
    for (std::size_t c = 0; c <= classes; ++c) {
        const auto& a = acc[c];
        UncertaintyRow row;
        row.name = c == classes ? "all" : std::to_string(c);
        row.frames = a.n;
        row.correct = a.correct;
        row.incorrect = a.n - a.correct;
        row.accuracy = a.n ? double(a.correct) / double(a.n) : 0.0;
        if (a.piw_c_n) row.piw_correct = a.piw_c / double(a.piw_c_n);
        if (a.piw_i_n) row.piw_incorrect = a.piw_i / double(a.piw_i_n);
        row.rejected = a.rej;
        row.not_rejected = a.keep;
        if (a.rej) row.acc_rejected = double(a.rej_correct) / double(a.rej);
        if (a.keep) row.acc_not_rejected = double(a.keep_correct) / double(a.keep);
        r.rows.push_back(row);
    }
    return r;
}

template <class T>
UncertaintyReport uncertainty_report(std::span<const TrajectorySet<T>> sets, std::span<const int> labels,
                                     std::size_t classes, PiwColumn column = PiwColumn::true_class) {
    if (sets.size() != labels.size()) throw ShapeError("uncertainty_report: trajectory sets and labels differ in length");
    std::vector<FrameSummary> frames;
    for (std::size_t i = 0; i < sets.size(); ++i)
        if (labels[i] != kMasked) frames.push_back(summarize_frame(sets[i], labels[i]));
    return uncertainty_report(std::span<const FrameSummary>(frames), classes, column);
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::string fmt(const std::optional<double>& v, double scale = 1.0, int prec = 2) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", prec, *v * scale);
    return buf;
}
} // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json videos = nlohmann::json::array();
    for (const auto& v : r.videos) {
        nlohmann::json cls = nlohmann::json::array();
        for (const auto& c : v.classes)
            cls.push_back({{"phase", c.phase}, {"precision", c.precision}, {"recall", c.recall}, {"jaccard", c.jaccard}});
        videos.push_back({{"accuracy", v.accuracy},
                          {"precision", v.precision},
                          {"recall", v.recall},
                          {"jaccard", v.jaccard},
                          {"classes", cls}});
    }
    return {{"relaxed", r.relaxed},
            {"accuracy", {{"mean", r.accuracy_mean}, {"std", r.accuracy_std}, {"per_video", r.accuracy}}},
            {"precision", r.precision},
            {"recall", r.recall},
            {"jaccard", r.jaccard},
            {"videos", videos}};
}

inline nlohmann::json to_json(const UncertaintyReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"class", row.name},
                        {"frames", row.frames},
                        {"accuracy", row.accuracy},
                        {"piw_correct", detail::opt(row.piw_correct)},
                        {"piw_incorrect", detail::opt(row.piw_incorrect)},
                        {"n_correct", row.correct},
                        {"n_incorrect", row.incorrect},
                        {"acc_rejected", detail::opt(row.acc_rejected)},
                        {"acc_not_rejected", detail::opt(row.acc_not_rejected)},
                        {"n_rejected", row.rejected},
                        {"n_not_rejected", row.not_rejected}});
    nlohmann::json j{{"piw_column", r.column == PiwColumn::true_class ? "true" : "predicted"}, {"rows", rows}};
    if (!r.notice.empty()) j["notice"] = r.notice;
    return j;
}

inline void write_text(std::ostream& os, const MetricsReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %8s %8s\n", r.relaxed ? "relaxed" : "strict", "Acc", "+-", "Pr",
                  "Re", "Ja");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-10s %8.2f %8.2f %8.2f %8.2f %8.2f\n", "", 100 * r.accuracy_mean,
                  100 * r.accuracy_std, 100 * r.precision, 100 * r.recall, 100 * r.jaccard);
    os << buf;
}

/// Columns: Class, Accuracy, PIW(x100) correct/incorrect, Acc by t-test
/// reject/not-reject (with not-rejected counts).
inline void write_text(std::ostream& os, const UncertaintyReport& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-6s %9s %12s %12s %12s %16s\n", "Class", "Accuracy", "PIW correct",
                  "PIW incorrect", "Acc reject", "Acc not-reject");
    os << buf;
    for (const auto& row : r.rows) {
        const auto keep = detail::fmt(row.acc_not_rejected, 100) + " (" + std::to_string(row.not_rejected) + ")";
        std::snprintf(buf, sizeof buf, "%-6s %9.2f %12s %12s %12s %16s\n", row.name.c_str(), 100 * row.accuracy,
                      detail::fmt(row.piw_correct, 100).c_str(), detail::fmt(row.piw_incorrect, 100).c_str(),
                      detail::fmt(row.acc_rejected, 100).c_str(), keep.c_str());
        os << buf;
    }
    if (!r.notice.empty()) os << "note: " << r.notice << '\n';
}

// ---------------------------------------------------------------------------
// Ribbons
// ---------------------------------------------------------------------------

struct Band {
    int phase = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    bool operator==(const Band&) const = default;
};

inline std::vector<Band> export_ribbon(std::span<const int> seq) {
    std::vector<Band> out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!out.empty() && out.back().phase == seq[i])
            ++out.back().length;
        else
            out.push_back({seq[i], i, 1});
    }
    return out;
}

inline std::vector<int> decode_ribbon(std::span<const Band> bands) {
    std::vector<int> seq;
    for (const auto& b : bands) seq.insert(seq.end(), b.length, b.phase);
    return seq;
}

inline void write_ribbon_csv(std::ostream& os, const std::string& video, std::span<const Band> bands, bool header) {
    if (header) os << "video,phase,start,length\n";
    for (const auto& b : bands) os << video << ',' << b.phase << ',' << b.start << ',' << b.length << '\n';
}

} // namespace phasediff
