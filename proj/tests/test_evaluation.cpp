#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "microspot/errors.hpp"
#include "microspot/evaluation.hpp"
#include "test_util.hpp"

using namespace microspot;

namespace {

GroundTruthEntry gt(const std::string& video, std::int64_t start, std::int64_t end) {
    GroundTruthEntry e;
    e.video_id = video;
    e.subject_id = video.substr(0, 3);
    e.onset = start + 1;
    e.apex = start + 1;
    e.offset = end;
    return e;
}

Detection det(const std::string& video, std::int64_t start, double conf) {
    return {WindowInterval{video, start / 40, start, start + 100}, conf};
}

// Probability that a random positive outscores a random negative, ties count half.
double mann_whitney_auc(const std::vector<double>& s, const std::vector<bool>& y) {
    double wins = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

// Fake per-video features: positive windows carry a bump in one feature so a
// small network can separate them.
std::vector<VideoFeatures> fake_dataset(std::vector<GroundTruthEntry>& truth, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> noise(0.0f, 0.2f);
    std::vector<VideoFeatures> out;
    const WindowGeometry geo{100, 60, 40};
    for (int s = 0; s < 3; ++s) {
        for (int v = 0; v < 2; ++v) {
            VideoFeatures f;
            f.subject_id = "s0" + std::to_string(s);
            f.video_id = f.subject_id + "_" + std::to_string(v);
            f.fps = 200;
            f.geometry = geo;
            f.rate = 4;
            f.timesteps = 5;
            f.dims = 3;
            f.frame_count = 500;
            const std::int64_t planted = 120 + 80 * v + 40 * s;
            truth.push_back(gt(f.video_id, planted + 10, planted + 60));
            for (const auto& w : generate_windows(f.frame_count, geo, f.video_id)) {
                HoofSequence seq;
                seq.window = w;
                seq.timesteps = 5;
                seq.dims = 3;
                const bool pos = w.start <= planted + 10 && w.end >= planted + 60;
                for (int i = 0; i < 15; ++i) seq.values.push_back(noise(gen) + (pos && i % 3 == 1 ? 0.8f : 0.0f));
                f.sequences.push_back(seq);
            }
            out.push_back(f);
        }
    }
    return out;
}

} // namespace

TEST(LosoFolds, OneFoldPerSubject) {
    const std::vector<VideoRef> refs{{"a1", "A"}, {"b1", "B"}, {"a2", "A"}, {"c1", "C"}};
    const auto folds = loso_folds(refs);
    ASSERT_EQ(folds.size(), 3u);
    EXPECT_EQ(folds[0].held_out_subject, "A");
    EXPECT_EQ(folds[0].test_videos, (std::vector<std::string>{"a1", "a2"}));
    EXPECT_EQ(folds[0].train_videos, (std::vector<std::string>{"b1", "c1"}));
    std::multiset<std::string> tested;
    for (const auto& f : folds) tested.insert(f.test_videos.begin(), f.test_videos.end());
    EXPECT_EQ(tested, (std::multiset<std::string>{"a1", "a2", "b1", "c1"}));
}

TEST(LosoFolds, TwentyNineSubjects) {
    std::vector<VideoRef> refs;
    for (int v = 0; v < 79; ++v) refs.push_back({"v" + std::to_string(v), "s" + std::to_string(v % 29)});
    EXPECT_EQ(loso_folds(refs).size(), 29u);
}

TEST(LosoFolds, SingleSubjectRejected) {
    EXPECT_THROW(loso_folds({{"a", "A"}, {"b", "A"}}), ValidationError);
}

TEST(MatchDetections, Examples) {
    auto r = match_detections({det("v", 0, 0.9)}, {gt("v", 20, 60)});
    EXPECT_EQ(r.tp, 1);
    EXPECT_EQ(r.fp, 0);
    EXPECT_EQ(r.fn, 0);
    ASSERT_EQ(r.matches.size(), 1u);

    r = match_detections({det("v", 0, 0.9)}, {gt("v", 300, 340)});
    EXPECT_EQ(r.tp, 0);
    EXPECT_EQ(r.fp, 1);
    EXPECT_EQ(r.fn, 1);
}

TEST(MatchDetections, EachMovementMatchedOnceInConfidenceOrder) {
    // Two movements inside one detection: only one TP, the rest FN.
    auto r = match_detections({det("v", 0, 0.9)}, {gt("v", 10, 30), gt("v", 50, 70)});
    EXPECT_EQ(r.tp, 1);
    EXPECT_EQ(r.fn, 1);
    r = match_detections({det("v", 0, 0.6), det("v", 100, 0.9)}, {gt("v", 120, 150), gt("v", 10, 30)});
    EXPECT_EQ(r.tp, 2);
    EXPECT_EQ(r.fp, 0);
    ASSERT_EQ(r.matches.size(), 2u);
    // Visited in descending confidence.
    EXPECT_EQ(r.matches[0], (std::pair<std::size_t, std::size_t>{1, 0}));
    EXPECT_EQ(r.matches[1], (std::pair<std::size_t, std::size_t>{0, 1}));
    // Other video never matches.
    r = match_detections({det("w", 0, 0.9)}, {gt("v", 10, 30)});
    EXPECT_EQ(r.tp, 0);
    EXPECT_EQ(r.fp, 1);
}

TEST(MatchDetections, OverlappingInputIsContractViolation) {
    EXPECT_THROW(match_detections({det("v", 0, 0.9), det("v", 40, 0.8)}, {}), ContractViolation);
    EXPECT_NO_THROW(match_detections({det("v", 0, 0.9), det("w", 40, 0.8)}, {}));
}

TEST(Metrics, PublishedCounts) {
    EXPECT_EQ(159 - 74, 85);
    const auto m = metrics(74, 1569, 85);
    EXPECT_NEAR(std::round(m.recall * 1e4) / 1e4, 0.4654, 5e-5);
    EXPECT_NEAR(std::round(m.precision * 1e4) / 1e4, 0.0450, 5e-5);
    EXPECT_NEAR(std::round(m.f1 * 1e4) / 1e4, 0.0821, 5e-5);
}

TEST(Metrics, DegenerateCases) {
    auto m = metrics(0, 0, 10);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_TRUE(m.precision_degenerate);
    EXPECT_FALSE(m.recall_degenerate);
    EXPECT_EQ(m.f1, 0.0);
    m = metrics(5, 0, 0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    m = metrics(0, 3, 0);
    EXPECT_TRUE(m.recall_degenerate);
    EXPECT_EQ(m.precision, 0.0);
}

TEST(Roc, PerfectScorer) {
    const auto curve = roc_curve({0.9, 0.8, 0.2, 0.1}, {true, true, false, false});
    bool through_corner = false;
    for (const auto& p : curve) through_corner = through_corner || (p.fpr == 0.0 && p.tpr == 1.0);
    EXPECT_TRUE(through_corner);
    EXPECT_DOUBLE_EQ(auc(curve), 1.0);
    EXPECT_EQ(curve.front().fpr, 0.0);
    EXPECT_EQ(curve.front().tpr, 0.0);
    EXPECT_EQ(curve.back().fpr, 1.0);
    EXPECT_EQ(curve.back().tpr, 1.0);
}

TEST(Roc, ConstantScorerIsDiagonal) {
    const auto curve = roc_curve(std::vector<double>(10, 0.5), {true, false, true, false, false, true, false, false, true, false});
    EXPECT_EQ(curve.size(), 2u);
    EXPECT_DOUBLE_EQ(auc(curve), 0.5);
}

TEST(Roc, RandomScoresNearHalf) {
    std::mt19937 gen(2024);
    std::uniform_real_distribution<double> u(0, 1);
    std::bernoulli_distribution b(0.5);
    std::vector<double> s;
    std::vector<bool> y;
    for (int i = 0; i < 1000; ++i) {
        s.push_back(u(gen));
        y.push_back(b(gen));
    }
    const double a = auc(roc_curve(s, y));
    EXPECT_GE(a, 0.45);
    EXPECT_LE(a, 0.55);
}

TEST(Roc, AreaMatchesRankStatisticWithTies) {
    std::mt19937 gen(5);
    std::uniform_int_distribution<int> level(0, 9);
    std::bernoulli_distribution b(0.3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s;
        std::vector<bool> y;
        for (int i = 0; i < 200; ++i) {
            const bool label = b(gen);
            y.push_back(label);
            s.push_back(level(gen) / 10.0 + (label ? 0.15 : 0.0));
        }
        const auto curve = roc_curve(s, y);
        EXPECT_NEAR(auc(curve), mann_whitney_auc(s, y), 1e-12);
        for (std::size_t i = 1; i < curve.size(); ++i) {
            EXPECT_GE(curve[i].fpr, curve[i - 1].fpr);
            EXPECT_GE(curve[i].tpr, curve[i - 1].tpr);
        }
        std::vector<double> squashed;
        for (double x : s) squashed.push_back(std::exp(3 * x) - 7);
        EXPECT_NEAR(auc(roc_curve(squashed, y)), auc(curve), 1e-12);
    }
}

TEST(Roc, SingleClassRejected) {
    EXPECT_THROW(roc_curve({0.1, 0.2}, {true, true}), ValidationError);
    EXPECT_THROW(roc_curve({0.1}, {true, false}), ValidationError);
}

TEST(TrainingSamples, LabelsFromCoverage) {
    std::vector<GroundTruthEntry> truth;
    const auto data = fake_dataset(truth, 1);
    const auto samples = training_samples({&data[0]}, truth);
    ASSERT_EQ(samples.size(), data[0].sequences.size());
    int positives = 0;
    for (const auto& s : samples) {
        positives += s.label;
        EXPECT_EQ(s.sequence.rows(), 5);
        EXPECT_EQ(s.sequence.cols(), 3);
    }
    EXPECT_EQ(positives, 2);
}

TEST(LosoEvaluation, FoldRowsSumToPooledCounts) {
    std::vector<GroundTruthEntry> truth;
    const auto data = fake_dataset(truth, 2);
    EvalConfig cfg;
    cfg.train.epochs = 30;
    cfg.train.batch_size = 8;
    cfg.adam.learning_rate = 1e-2;
    const auto r = run_loso_evaluation(data, truth, cfg);
    ASSERT_EQ(r.folds.size(), 3u);
    std::int64_t tp = 0, fp = 0, fn = 0, gts = 0, test_windows = 0;
    for (const auto& f : r.folds) {
        tp += f.tp;
        fp += f.fp;
        fn += f.fn;
        gts += f.ground_truth;
        test_windows += f.test_windows;
        EXPECT_EQ(f.tp + f.fn, f.ground_truth);
        for (const auto& s : f.train_subjects) EXPECT_NE(s, f.fold.held_out_subject);
    }
    EXPECT_EQ(tp, r.tp);
    EXPECT_EQ(fp, r.fp);
    EXPECT_EQ(fn, r.fn);
    EXPECT_EQ(gts, static_cast<std::int64_t>(truth.size()));
    EXPECT_EQ(r.tp + r.fn, static_cast<std::int64_t>(truth.size()));
    EXPECT_EQ(test_windows, static_cast<std::int64_t>(r.windows.size()));
    EXPECT_EQ(r.kept_detections.size(), static_cast<std::size_t>(r.tp + r.fp));
    EXPECT_GE(r.roc_auc, 0.9);
}

TEST(LosoEvaluation, DeterministicAndJobCountIndependent) {
    std::vector<GroundTruthEntry> truth;
    const auto data = fake_dataset(truth, 3);
    EvalConfig cfg;
    cfg.train.epochs = 5;
    const auto a = to_json(run_loso_evaluation(data, truth, cfg));
    const auto b = to_json(run_loso_evaluation(data, truth, cfg));
    cfg.jobs = 3;
    const auto c = to_json(run_loso_evaluation(data, truth, cfg));
    EXPECT_EQ(a.dump(), b.dump());
    EXPECT_EQ(a.dump(), c.dump());
}

TEST(Report, FilesWritten) {
    std::vector<GroundTruthEntry> truth;
    const auto data = fake_dataset(truth, 4);
    EvalConfig cfg;
    cfg.train.epochs = 2;
    const auto r = run_loso_evaluation(data, truth, cfg);
    testutil::TempDir dir;
    write_report(dir.path(), r);
    const auto doc = nlohmann::json::parse(testutil::read_file(dir / "report.json"));
    EXPECT_EQ(doc["tp"], r.tp);
    EXPECT_EQ(doc["folds"].size(), 3u);
    const auto metrics_csv = testutil::read_file(dir / "metrics.csv");
    EXPECT_EQ(metrics_csv.substr(0, metrics_csv.find('\n')), "tp,fp,fn,recall,precision,f1,roc_auc");
    const auto roc_csv = testutil::read_file(dir / "roc.csv");
    EXPECT_EQ(static_cast<std::size_t>(std::count(roc_csv.begin(), roc_csv.end(), '\n')), r.roc.size() + 1);
}
