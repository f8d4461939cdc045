#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace phasediff;
using namespace phasediff::testing;

namespace {

std::vector<int> repeat(std::initializer_list<std::pair<int, int>> runs) {
    std::vector<int> v;
    for (auto [phase, n] : runs) v.insert(v.end(), std::size_t(n), phase);
    return v;
}

TrajectorySet<double> from_rows(const std::vector<std::vector<double>>& rows) {
    TrajectorySet<double> ts{rows.size(), rows.front().size(), {}, {}};
    for (const auto& r : rows) ts.values.insert(ts.values.end(), r.begin(), r.end());
    return ts;
}

} // namespace

TEST(Metrics, PerfectPredictionsScoreOne) {
    const auto labels = repeat({{0, 5}, {2, 3}, {1, 4}});
    const auto r = frame_metrics({labels}, {labels}, 3, false, 1.0);
    EXPECT_EQ(r.accuracy_mean, 1.0);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.jaccard, 1.0);
}

TEST(Metrics, RelaxedBoundaryHandTrace) {
    const auto labels = repeat({{0, 20}, {1, 20}});
    auto preds = labels;
    preds[18] = 1;
    EXPECT_DOUBLE_EQ(frame_metrics({preds}, {labels}, 2, false, 1.0).accuracy_mean, 39.0 / 40.0);
    EXPECT_DOUBLE_EQ(frame_metrics({preds}, {labels}, 2, true, 1.0).accuracy_mean, 1.0);
}

TEST(Metrics, RelaxedWindowEdges) {
    const auto labels = repeat({{0, 20}, {1, 20}});
    auto preds = labels;
    preds[9] = 1;  // 11 frames before the transition: outside the window
    preds[10] = 1; // 10 frames before: inside
    preds[29] = 0; // 10th frame after: inside
    preds[30] = 0; // outside
    const auto relaxed = relax_predictions(preds, labels, 10);
    EXPECT_EQ(relaxed[9], 1);
    EXPECT_EQ(relaxed[10], 0);
    EXPECT_EQ(relaxed[29], 1);
    EXPECT_EQ(relaxed[30], 0);
    // A window scaled by fps: 0.5 fps → 5 frames.
    EXPECT_DOUBLE_EQ(frame_metrics({preds}, {labels}, 2, true, 0.5).accuracy_mean, 36.0 / 40.0);
}

TEST(Metrics, RelaxedOnlyAcceptsTheAdjacentPhase) {
    const auto labels = repeat({{0, 20}, {1, 20}});
    auto preds = labels;
    preds[18] = 2;
    EXPECT_DOUBLE_EQ(frame_metrics({preds}, {labels}, 3, true, 1.0).accuracy_mean, 39.0 / 40.0);
}

TEST(Metrics, MacroToyHandCount) {
    const std::vector<int> preds{0, 0, 1, 1, 1, 1}, labels{0, 0, 0, 0, 1, 1};
    const auto r = frame_metrics({preds}, {labels}, 2, false, 1.0);
    const auto& cls = r.videos[0].classes;
    ASSERT_EQ(cls.size(), 2u);
    EXPECT_DOUBLE_EQ(cls[0].precision, 1.0);
    EXPECT_DOUBLE_EQ(cls[1].precision, 0.5);
    EXPECT_DOUBLE_EQ(cls[0].recall, 0.5);
    EXPECT_DOUBLE_EQ(cls[1].recall, 1.0);
    EXPECT_DOUBLE_EQ(cls[0].jaccard, 0.5);
    EXPECT_DOUBLE_EQ(cls[1].jaccard, 0.5);
    EXPECT_DOUBLE_EQ(r.precision, 0.75);
    EXPECT_DOUBLE_EQ(r.recall, 0.75);
    EXPECT_DOUBLE_EQ(r.jaccard, 0.5);
}

TEST(Metrics, AbsentPhasesAreIgnoredAndMaskedFramesDropped) {
    const std::vector<int> preds{0, 0, 1, 1, 2}, labels{0, 0, 1, 1, kMasked};
    const auto r = frame_metrics({preds}, {labels}, 5, false, 1.0);
    EXPECT_EQ(r.videos[0].classes.size(), 2u);
    EXPECT_EQ(r.jaccard, 1.0);
}

TEST(Metrics, AccuracyStdIsTheSampleStd) {
    const std::vector<int> a{0, 0, 0, 0}, b{0, 0, 1, 1};
    const auto r = frame_metrics({a, b}, {a, a}, 2, false, 1.0);
    EXPECT_DOUBLE_EQ(r.accuracy_mean, 0.75);
    EXPECT_DOUBLE_EQ(r.accuracy_std, std::sqrt(2 * 0.25 * 0.25));
}

TEST(Metrics, LengthMismatchIsAnError) {
    EXPECT_THROW(frame_metrics({{0, 1}}, {{0, 1, 1}}, 2, false, 1.0), ShapeError);
    EXPECT_THROW(frame_metrics({{0}}, {{0}, {1}}, 2, false, 1.0), ShapeError);
}

TEST(Metrics, RelaxedNeverLowersAccuracyAndMacroIsRelabelingInvariant) {
    CounterRng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> labels, preds;
        int phase = 0;
        while (labels.size() < 120) {
            labels.insert(labels.end(), rng.uniform_int(3, 30), phase);
            phase = int(rng.uniform_int(0, 4));
        }
        for (int l : labels) preds.push_back(rng.uniform() < 0.7 ? l : int(rng.uniform_int(0, 4)));
        const auto strict = frame_metrics({preds}, {labels}, 5, false, 1.0);
        const auto relaxed = frame_metrics({preds}, {labels}, 5, true, 1.0);
        EXPECT_GE(relaxed.accuracy_mean, strict.accuracy_mean);
        const std::vector<int> perm{3, 0, 4, 1, 2};
        auto relabel = [&](std::vector<int> v) {
            for (auto& x : v) x = perm[std::size_t(x)];
            return v;
        };
        const auto moved = frame_metrics({relabel(preds)}, {relabel(labels)}, 5, false, 1.0);
        EXPECT_NEAR(moved.precision, strict.precision, 1e-15);
        EXPECT_NEAR(moved.recall, strict.recall, 1e-15);
        EXPECT_NEAR(moved.jaccard, strict.jaccard, 1e-15);
        for (double v : {strict.precision, strict.recall, strict.jaccard, strict.accuracy_mean}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Piw, HandEvaluatedInterpolation) {
    const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> s = v;
    EXPECT_NEAR(quantile_sorted(s, 0.025), 0.11, 1e-15);
    EXPECT_NEAR(quantile_sorted(s, 0.975), 0.49, 1e-15);
    EXPECT_NEAR(piw(v), 0.38, 1e-15);
    const std::vector<double> shuffled{0.4, 0.1, 0.5, 0.3, 0.2};
    EXPECT_EQ(piw(shuffled), piw(v));
}

TEST(Piw, ConstantSampleHasZeroWidth) {
    const std::vector<double> v(10, 0.3);
    EXPECT_EQ(piw(v), 0.0);
    EXPECT_THROW(piw(std::vector<double>{0.3}), RangeError);
}

TEST(Ptst, HandComputedStatistic) {
    const std::vector<double> top1{0.9, 0.8, 0.6, 0.95}, top2{0.4, 0.3, 0.3, 0.25};
    const auto r = ptst(top1, top2);
    EXPECT_NEAR(r.t, 6.1237, 5e-5);
    EXPECT_NEAR(r.t, 0.5 / (0.1632993 / 2.0), 1e-5);
    EXPECT_TRUE(r.rejected);
    const auto swapped = ptst(top2, top1);
    EXPECT_EQ(swapped.t, -r.t);
    EXPECT_EQ(swapped.p, r.p);
}

TEST(Ptst, TabulatedTDistributionValues) {
    // Two-sided critical values: t_{0.975, 3} = 3.182446, t_{0.975, 10} = 2.228139, t_{0.995, 20} = 2.845340.
    EXPECT_NEAR(t_two_sided_p(3.182446, 3), 0.05, 1e-6);
    EXPECT_NEAR(t_two_sided_p(2.228139, 10), 0.05, 1e-6);
    EXPECT_NEAR(t_two_sided_p(2.845340, 20), 0.01, 1e-6);
    EXPECT_EQ(t_two_sided_p(0.0, 5), 1.0);
}

TEST(Ptst, PValueIsMonotoneInAbsoluteT) {
    double prev = 1.0;
    for (double t = 0.0; t < 10.0; t += 0.25) {
        const double p = t_two_sided_p(t, 99);
        EXPECT_LE(p, prev);
        EXPECT_GE(p, 0.0);
        prev = p;
        EXPECT_EQ(t_two_sided_p(-t, 99), p);
    }
}

TEST(Ptst, SymmetricJitterIsRarelyRejected) {
    int rejected = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto j = normals(100, seed);
        std::vector<double> a(100), b(100);
        for (std::size_t k = 0; k < 100; ++k) {
            a[k] = 0.4 + 0.01 * j[k];
            b[k] = 0.4 - 0.01 * j[k];
        }
        rejected += ptst(a, b).rejected;
    }
    // Expected 5% false rejections; 25 of 200 is far in the tail.
    EXPECT_LT(rejected, 25);
}

TEST(Ptst, DegenerateSamples) {
    const std::vector<double> a{0.5, 0.5, 0.5}, b{0.2, 0.2, 0.2};
    const auto r = ptst(a, b);
    EXPECT_TRUE(r.rejected);
    EXPECT_EQ(r.p, 0.0);
    EXPECT_THROW(ptst(a, a), NumericError);
    EXPECT_THROW(ptst(std::vector<double>{1}, std::vector<double>{0}), RangeError);
}

TEST(Uncertainty, PerfectZeroVariancePredictor) {
    std::vector<TrajectorySet<double>> sets;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
        const int l = i % 3;
        std::vector<double> row(3, 0.0);
        row[std::size_t(l)] = 5.0;
        sets.push_back(from_rows(std::vector<std::vector<double>>(4, row)));
        labels.push_back(l);
    }
    const auto r = uncertainty_report<double>(sets, labels, 3);
    ASSERT_EQ(r.rows.size(), 4u);
    EXPECT_EQ(r.rows.back().name, "all");
    EXPECT_EQ(r.rows.back().accuracy, 1.0);
    EXPECT_EQ(r.rows.back().piw_correct, 0.0);
    EXPECT_FALSE(r.rows.back().piw_incorrect.has_value());
    EXPECT_EQ(r.rows.back().rejected + r.rows.back().not_rejected, 6u);
}

TEST(Uncertainty, PartitionsAreExhaustive) {
    CounterRng rng(11);
    std::vector<TrajectorySet<double>> sets;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        std::vector<std::vector<double>> rows(20, std::vector<double>(4));
        for (auto& r : rows)
            for (auto& v : r) v = rng.normal();
        sets.push_back(from_rows(rows));
        labels.push_back(int(rng.uniform_int(0, 3)));
    }
    labels[5] = kMasked;
    const auto r = uncertainty_report<double>(sets, labels, 4);
    ASSERT_EQ(r.rows.size(), 5u);
    std::size_t total = 0;
    for (std::size_t c = 0; c < 4; ++c) {
        const auto& row = r.rows[c];
        EXPECT_EQ(row.correct + row.incorrect, row.frames);
        EXPECT_EQ(row.rejected + row.not_rejected, row.frames);
        total += row.frames;
    }
    EXPECT_EQ(total, 39u);
    EXPECT_EQ(r.rows[4].frames, 39u);
    const auto text = [&] {
        std::ostringstream os;
        write_text(os, r);
        return os.str();
    }();
    EXPECT_NE(text.find("all"), std::string::npos);
    EXPECT_EQ(to_json(r)["rows"].size(), 5u);
}

TEST(Uncertainty, ColumnSwitchMeasuresThePredictedClass) {
    // Trajectories confidently vote class 1; the truth is class 0.
    const auto ts = from_rows({{0.0, 3.0}, {0.5, 3.0}, {0.0, 2.0}, {1.0, 3.0}});
    const auto s = summarize_frame(ts, 0);
    EXPECT_EQ(s.predicted, 1);
    ASSERT_TRUE(s.piw_true && s.piw_predicted);
    const std::vector<FrameSummary> frames{s};
    const auto t = uncertainty_report(std::span<const FrameSummary>(frames), 2, PiwColumn::true_class);
    const auto p = uncertainty_report(std::span<const FrameSummary>(frames), 2, PiwColumn::predicted_class);
    EXPECT_EQ(t.rows.back().piw_incorrect, s.piw_true);
    EXPECT_EQ(p.rows.back().piw_incorrect, s.piw_predicted);
}

TEST(Ribbon, RunLengthEncoding) {
    const std::vector<int> seq{0, 0, 1};
    const auto bands = export_ribbon(seq);
    ASSERT_EQ(bands.size(), 2u);
    EXPECT_EQ(bands[0], (Band{0, 0, 2}));
    EXPECT_EQ(bands[1], (Band{1, 2, 1}));
    std::ostringstream os;
    write_ribbon_csv(os, "v", bands, true);
    EXPECT_EQ(os.str(), "video,phase,start,length\nv,0,0,2\nv,1,2,1\n");
}

TEST(Ribbon, DecodeRoundTripsAndCoversTheSequence) {
    CounterRng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> seq(1 + rng.uniform_int(0, 200));
        for (auto& v : seq) v = rng.uniform() < 0.8 && &v != seq.data() ? *(&v - 1) : int(rng.uniform_int(0, 6));
        const auto bands = export_ribbon(seq);
        EXPECT_EQ(decode_ribbon(bands), seq);
        std::size_t total = 0;
        for (const auto& b : bands) total += b.length;
        EXPECT_EQ(total, seq.size());
    }
}
