#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace phasediff;
using namespace phasediff::testing;

namespace {

SynthConfig small_config(std::uint64_t seed = 1) {
    SynthConfig c;
    c.features = 4;
    c.seed = seed;
    return c;
}

std::vector<double> frame_counts(const std::vector<PhaseSequence>& videos, std::size_t C) {
    std::vector<double> n(C, 0.0);
    for (const auto& v : videos)
        for (int l : v.labels) n[std::size_t(l)] += 1;
    return n;
}

} // namespace

TEST(Generate, DeterministicGivenTheSeed) {
    const auto a = make_dataset(small_config(3), 10);
    const auto b = make_dataset(small_config(3), 10);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, make_dataset(small_config(4), 10));
}

TEST(Generate, ShapesAndSplits) {
    const auto ds = make_dataset(small_config(), 10);
    ASSERT_EQ(ds.videos.size(), 10u);
    std::size_t test = 0;
    for (const auto& v : ds.videos) {
        EXPECT_GE(v.length(), 1u);
        EXPECT_EQ(v.x.size(), v.length() * 4);
        for (int l : v.labels) {
            EXPECT_GE(l, 0);
            EXPECT_LT(l, 7);
        }
        test += v.split == "test";
    }
    EXPECT_EQ(test, 5u);
    EXPECT_EQ(ds.split("train").videos.size() + ds.split("test").videos.size(), 10u);
}

TEST(Generate, FrequencyRatioTracksTheImbalanceSetting) {
    auto cfg = small_config(5);
    cfg.skip_prob = 0;
    cfg.return_prob = 0;
    cfg.duration_jitter = 0.2;
    const auto videos = generate(cfg, 60);
    const auto n = frame_counts(videos, cfg.classes);
    const double ratio = *std::max_element(n.begin(), n.end()) / *std::min_element(n.begin(), n.end());
    EXPECT_NEAR(ratio, cfg.imbalance, 0.2 * cfg.imbalance);
}

TEST(Generate, BalancedSettingGivesNearUniformCounts) {
    auto cfg = small_config(6);
    cfg.imbalance = 1.0;
    cfg.skip_prob = 0;
    cfg.return_prob = 0;
    const auto n = frame_counts(generate(cfg, 100), cfg.classes);
    const double mean = std::accumulate(n.begin(), n.end(), 0.0) / double(n.size());
    for (double c : n) EXPECT_NEAR(c, mean, 0.1 * mean);
}

TEST(Generate, TinyNoiseIsLinearlySeparable) {
    auto cfg = small_config(7);
    cfg.sigma = 1e-6;
    cfg.overlap_pairs.clear();
    const auto videos = generate(cfg, 10);
    const auto mu = emitter_means(cfg);
    std::size_t right = 0, total = 0;
    for (const auto& v : videos)
        for (std::size_t f = 0; f < v.length(); ++f) {
            const auto x = v.frame(f);
            // Nearest mean is a linear rule: argmax_c μ_c·x − ‖μ_c‖²/2.
            std::size_t best = 0;
            double best_score = -1e300;
            for (std::size_t c = 0; c < mu.size(); ++c) {
                double s = 0;
                for (std::size_t k = 0; k < x.size(); ++k) s += mu[c][k] * x[k] - 0.5 * mu[c][k] * mu[c][k];
                if (s > best_score) best_score = s, best = c;
            }
            right += int(best) == v.labels[f];
            ++total;
        }
    EXPECT_GT(double(right) / double(total), 0.99);
}

TEST(Generate, OverlapPairsSitHalfSigmaApart) {
    const auto cfg = small_config();
    const auto mu = emitter_means(cfg);
    for (auto [a, b] : cfg.overlap_pairs) {
        double d2 = 0;
        for (std::size_t k = 0; k < cfg.features; ++k) d2 += std::pow(mu[std::size_t(a)][k] - mu[std::size_t(b)][k], 2);
        EXPECT_NEAR(std::sqrt(d2), 0.5 * cfg.sigma, 1e-12);
    }
}

TEST(Generate, InvalidConfigsAreRejected) {
    auto cfg = small_config();
    cfg.classes = 1;
    EXPECT_THROW(generate(cfg, 1), ConfigError);
    cfg = small_config();
    cfg.sigma = 0;
    EXPECT_THROW(generate(cfg, 1), ConfigError);
    cfg = small_config();
    cfg.imbalance = 0.5;
    EXPECT_THROW(generate(cfg, 1), ConfigError);
}

TEST(Corpus, RoundTripIsExact) {
    const auto dir = temp_dir("corpus_roundtrip");
    const auto ds = make_dataset(small_config(), 4);
    write_corpus(ds, dir);
    EXPECT_EQ(load_corpus(dir / "manifest.json"), ds);
}

TEST(Corpus, MissingFileIsReported) {
    const auto dir = temp_dir("corpus_missing");
    write_corpus(make_dataset(small_config(), 2), dir);
    std::filesystem::remove(dir / "video_001.csv");
    try {
        load_corpus(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("video_001.csv"), std::string::npos);
    }
}

TEST(Corpus, HeaderWidthMismatchIsReported) {
    const auto dir = temp_dir("corpus_header");
    write_corpus(make_dataset(small_config(), 1), dir);
    std::ofstream(dir / "video_000.csv") << "label,f0,f1\n0,1,2\n";
    EXPECT_THROW(load_corpus(dir / "manifest.json"), DataError);
}

TEST(Corpus, BadRowNamesPathAndRow) {
    const auto dir = temp_dir("corpus_row");
    write_corpus(make_dataset(small_config(), 1), dir);
    std::ofstream(dir / "video_000.csv") << "label,f0,f1,f2,f3\n0,1,2,3,4\n9,1,2,3,4\n";
    try {
        load_corpus(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("video_000.csv row 3"), std::string::npos) << msg;
    }
}

TEST(MetaSet, QuotaOnePerClass) {
    const auto train = make_dataset(small_config(), 10).split("train");
    const auto m = build_meta_set(train, 1, 3);
    EXPECT_EQ(m.frames.size(), 7u);
    for (std::size_t c = 0; c < 7; ++c) {
        ASSERT_EQ(m.by_class[c].size(), 1u);
        EXPECT_EQ(m.frames[m.by_class[c][0]].label, int(c));
        EXPECT_FALSE(m.exhausted[c]);
    }
}

TEST(MetaSet, LargeQuotaExhaustsSmallClasses) {
    const auto train = make_dataset(small_config(), 4).split("train");
    const auto counts = train.class_counts();
    const std::size_t q = *std::max_element(counts.begin(), counts.end());
    const auto m = build_meta_set(train, q, 1);
    for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_EQ(m.by_class[c].size(), std::min(q, counts[c]));
        EXPECT_EQ(m.exhausted[c], counts[c] < q);
    }
}

TEST(MetaSet, SeedsChangeTheSelectionNotTheCounts) {
    const auto train = make_dataset(small_config(), 10).split("train");
    const auto a = build_meta_set(train, 5, 1), b = build_meta_set(train, 5, 2);
    EXPECT_NE(a.frames, b.frames);
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(a.by_class[c].size(), b.by_class[c].size());
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& f : a.frames) EXPECT_TRUE(seen.insert({f.video, f.frame}).second);
    EXPECT_EQ(build_meta_set(train, 5, 1).frames, a.frames);
}

TEST(MetaSet, ClassWithoutLabelsIsAnError) {
    auto train = make_dataset(small_config(), 4).split("train");
    for (auto& v : train.videos)
        for (auto& l : v.labels)
            if (l == 3) l = kMasked;
    try {
        build_meta_set(train, 2, 1);
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find('3'), std::string::npos);
    }
}

TEST(LabelDropout, ExactCounts) {
    Dataset ds{2, 1, 1.0, {PhaseSequence{"v", "train", 1.0, 1, std::vector<double>(1000, 0.0), std::vector<int>(1000, 1)}}};
    EXPECT_EQ(apply_label_dropout(ds, 0.0, 1), ds);
    EXPECT_EQ(apply_label_dropout(ds, 0.25, 1).labeled_frames(), 750u);
    EXPECT_EQ(apply_label_dropout(ds, 1.0, 1).labeled_frames(), 0u);
    EXPECT_NE(apply_label_dropout(ds, 0.25, 1), apply_label_dropout(ds, 0.25, 2));
    EXPECT_THROW(apply_label_dropout(ds, 1.5, 1), RangeError);
}

TEST(BackgroundMode, Semantics) {
    Dataset ds{3, 1, 1.0, {PhaseSequence{"v", "train", 1.0, 1, {0, 1, 2, 3}, {0, kMasked, 2, kMasked}}}};
    const auto dropped = apply_background_mode(ds, BackgroundMode::drop_frames);
    EXPECT_EQ(dropped.videos[0].labels, (std::vector<int>{0, 2}));
    EXPECT_EQ(dropped.videos[0].x, (std::vector<double>{0, 2}));
    EXPECT_EQ(dropped.classes, 3u);
    EXPECT_EQ(apply_background_mode(ds, BackgroundMode::context_only), ds);
    const auto pseudo = apply_background_mode(ds, BackgroundMode::single_pseudo_label);
    EXPECT_EQ(pseudo.classes, 4u);
    EXPECT_EQ(pseudo.videos[0].labels, (std::vector<int>{0, 3, 2, 3}));
    EXPECT_EQ(background_mode_from_string(to_string(BackgroundMode::context_only)), BackgroundMode::context_only);
    EXPECT_THROW(background_mode_from_string("ignore"), ConfigError);
}
