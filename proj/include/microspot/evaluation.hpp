#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "microspot/dataio.hpp"
#include "microspot/features.hpp"
#include "microspot/network.hpp"
#include "microspot/spotting.hpp"

namespace microspot {

struct VideoRef {
    std::string video_id;
    std::string subject_id;
};

struct LosoFold {
    std::string held_out_subject;
    std::vector<std::string> train_videos;
    std::vector<std::string> test_videos;
};

/// One fold per distinct subject, ordered by subject id. Needs >= 2 subjects.
std::vector<LosoFold> loso_folds(const std::vector<VideoRef>& videos);

struct MatchResult {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    /// (detection index, ground-truth index) for every true positive.
    std::vector<std::pair<std::size_t, std::size_t>> matches;
};

/// Greedy one-to-one matching in descending confidence. A detection is a true
/// positive when it covers >= 80% of a still-unmatched movement.
/// Throws ContractViolation if the detections overlap each other.
MatchResult match_detections(const std::vector<Detection>& kept, const std::vector<GroundTruthEntry>& ground_truth);

struct Metrics {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    bool recall_degenerate = false;     // TP + FN == 0
    bool precision_degenerate = false;  // TP + FP == 0
};

Metrics metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

/// ROC swept over every distinct score, from (0,0) to (1,1).
/// Throws ValidationError unless both classes occur.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels);

/// Trapezoidal area under an ROC curve.
double auc(const std::vector<RocPoint>& curve);

struct EvalConfig {
    AdamConfig adam;
    TrainConfig train;
    int hidden = kDefaultHidden;
    std::uint64_t model_seed = 1;
    double threshold = 0.5;
    int jobs = 1;
};

struct FoldReport {
    LosoFold fold;
    std::int64_t train_windows = 0;
    std::int64_t test_windows = 0;
    std::int64_t ground_truth = 0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    double final_loss = 0.0;
    /// Subjects whose windows were used for training in this fold.
    std::vector<std::string> train_subjects;
};

struct PooledWindow {
    std::string video_id;
    std::int64_t start = 0;
    std::int64_t end = 0;
    double confidence = 0.0;
    bool label = false;
};

struct EvalReport {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    Metrics summary;
    std::vector<FoldReport> folds;
    std::vector<RocPoint> roc;
    double roc_auc = 0.0;
    double threshold = 0.5;
    std::vector<PooledWindow> windows;           // pre-suppression scores of held-out windows
    std::vector<Detection> kept_detections;      // post-suppression, all folds
};

/// Labeled training samples for the given videos.
std::vector<LabeledSample> training_samples(const std::vector<const VideoFeatures*>& videos,
                                            const std::vector<GroundTruthEntry>& ground_truth);

EvalReport run_loso_evaluation(const std::vector<VideoFeatures>& videos,
                               const std::vector<GroundTruthEntry>& ground_truth, const EvalConfig& config);

nlohmann::json to_json(const EvalReport& report);

/// Writes report.json, metrics.csv and roc.csv into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

} // namespace microspot
