#include "microspot/spotting.hpp"

#include <algorithm>

#include "microspot/errors.hpp"

namespace microspot {

double overlap_ratio(const Interval& window, const Interval& movement) {
    if (movement.empty()) throw ValidationError("overlap ratio: empty movement interval");
    return static_cast<double>(window.intersection_length(movement)) / static_cast<double>(movement.length());
}

std::vector<LabeledWindow> label_windows(const std::vector<WindowInterval>& windows,
                                         const std::vector<GroundTruthEntry>& ground_truth, double threshold) {
    std::vector<LabeledWindow> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        LabeledWindow lw;
        lw.window = w;
        std::optional<std::size_t> best;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            const auto& entry = ground_truth[g];
            if (entry.video_id != w.video_id) continue;
            const double ratio = overlap_ratio(w.interval(), entry.interval());
            if (!best || ratio > lw.best_ratio) {
                best = g;
                lw.best_ratio = ratio;
            }
        }
        lw.label = best.has_value() && lw.best_ratio >= threshold;
        if (lw.label) lw.matched_gt = best;
        out.push_back(std::move(lw));
    }
    return out;
}

std::vector<Detection> score_windows(const VideoFeatures& features, const LstmModel& model) {
    const auto expected = generate_windows(features.frame_count, features.geometry, features.video_id);
    if (expected.size() != features.sequences.size()) {
        throw ConsistencyError("features for " + features.video_id + " cover " +
                               std::to_string(features.sequences.size()) + " windows, expected " +
                               std::to_string(expected.size()));
    }
    std::vector<Detection> out;
    out.reserve(expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const auto& seq = features.sequences[k];
        if (seq.window.start != expected[k].start || seq.window.end != expected[k].end ||
            seq.values.size() != static_cast<std::size_t>(seq.timesteps * seq.dims) || seq.timesteps == 0) {
            throw ConsistencyError("feature block missing or malformed for " + features.video_id + " window " +
                                   std::to_string(k));
        }
        out.push_back({expected[k], predict(model, to_sequence(seq))});
    }
    return out;
}

std::vector<Detection> threshold_detections(const std::vector<Detection>& scored, double threshold) {
    std::vector<Detection> out;
    for (const auto& d : scored) {
        if (d.confidence >= threshold) out.push_back(d);
    }
    return out;
}

std::vector<Detection> spot(const VideoFeatures& features, const LstmModel& model, double threshold) {
    return threshold_detections(score_windows(features, model), threshold);
}

std::vector<Detection> nms(const std::vector<Detection>& detections) {
    std::vector<Detection> remaining = detections;
    std::stable_sort(remaining.begin(), remaining.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.window.start < b.window.start;
    });
    std::vector<Detection> kept;
    std::vector<bool> removed(remaining.size(), false);
    for (std::size_t i = 0; i < remaining.size(); ++i) {
        if (removed[i]) continue;
        kept.push_back(remaining[i]);
        for (std::size_t j = i + 1; j < remaining.size(); ++j) {
            if (!removed[j] && remaining[j].window.interval().intersects(remaining[i].window.interval())) {
                removed[j] = true;
            }
        }
    }
    std::sort(kept.begin(), kept.end(),
              [](const Detection& a, const Detection& b) { return a.window.start < b.window.start; });
    return kept;
}

} // namespace microspot
