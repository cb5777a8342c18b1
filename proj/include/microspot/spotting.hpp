#pragma once

#include <optional>
#include <vector>

#include "microspot/dataio.hpp"
#include "microspot/features.hpp"
#include "microspot/network.hpp"
#include "microspot/preprocess.hpp"

namespace microspot {

/// A window counts as containing a movement when it covers this share of it.
inline constexpr double kCoverageThreshold = 0.8;

struct Detection {
    WindowInterval window;
    double confidence = 0.0;
};

struct LabeledWindow {
    WindowInterval window;
    bool label = false;
    std::optional<std::size_t> matched_gt;  // index into the ground-truth list given
    double best_ratio = 0.0;
};

/// |I ∩ S| / |S|. Throws ValidationError for empty S.
double overlap_ratio(const Interval& window, const Interval& movement);

/// Labels each window true when some ground-truth interval of the same video
/// reaches the coverage threshold; the best-covered entry is recorded.
std::vector<LabeledWindow> label_windows(const std::vector<WindowInterval>& windows,
                                         const std::vector<GroundTruthEntry>& ground_truth,
                                         double threshold = kCoverageThreshold);

/// Positive-class confidence for every cached window, in window order.
/// Throws ConsistencyError if the cache does not cover the video's windows.
std::vector<Detection> score_windows(const VideoFeatures& features, const LstmModel& model);

/// Windows whose confidence is at least `threshold`.
std::vector<Detection> threshold_detections(const std::vector<Detection>& scored, double threshold);

std::vector<Detection> spot(const VideoFeatures& features, const LstmModel& model, double threshold = 0.5);

/// Greedy suppression: keep the most confident detection (earlier start on
/// ties), drop everything intersecting it, repeat. Output sorted by start.
std::vector<Detection> nms(const std::vector<Detection>& detections);

} // namespace microspot
