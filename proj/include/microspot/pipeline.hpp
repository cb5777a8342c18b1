#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "microspot/dataio.hpp"
#include "microspot/evaluation.hpp"
#include "microspot/features.hpp"
#include "microspot/network.hpp"
#include "microspot/optflow.hpp"
#include "microspot/preprocess.hpp"
#include "microspot/spotting.hpp"

namespace microspot {

/// Every tunable of the pipeline in one place. Loaded from JSON; missing keys
/// keep their defaults.
struct PipelineConfig {
    WindowParams window;
    RoiParams roi;
    FlowParams flow;
    HoofParams hoof;
    AdamConfig adam;
    TrainConfig train;
    int hidden = kDefaultHidden;
    std::uint64_t seed = 1;
    double threshold = 0.5;
    int jobs = 1;
    SyntheticSpec synth;
    int port = 8080;
    double negative_feedback_weight = 1.0;

    void validate() const;
};

PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const PipelineConfig& config);

/// Hash of the parameters that shape feature values (window, ROI, flow, HOOF).
std::uint64_t feature_params_hash(const PipelineConfig& config);

/// Aligns, computes flow and bins HOOF for every window of one video.
/// Flow fields shared by overlapping windows with the same alignment are reused.
VideoFeatures extract_video_features(const FrameSequence& sequence, const LandmarkSet& landmarks,
                                     const PipelineConfig& config);

/// Extracts and writes `<out_dir>/<video_id>.feat` for every manifest video.
std::vector<VideoFeatures> extract_manifest_features(const DatasetManifest& manifest, const PipelineConfig& config,
                                                     const std::filesystem::path& out_dir);

/// Reads every *.feat file in `dir`, ordered by video id.
std::vector<VideoFeatures> load_feature_dir(const std::filesystem::path& dir);

/// Window/alignment/ROI description of a video as JSON.
nlohmann::json describe_windows(const std::vector<PreparedWindow>& windows);

struct DetectionRow {
    Detection detection;
    bool kept = false;
};

/// CSV `video,start,end,confidence,kept` with one row per above-threshold window.
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRow>& rows);
std::vector<DetectionRow> read_detections(const std::filesystem::path& path);

/// Scores, thresholds and suppresses every video; rows in video order.
std::vector<DetectionRow> spot_videos(const std::vector<VideoFeatures>& videos, const LstmModel& model,
                                      double threshold);

/// Formats a double with the shortest round-trip representation.
std::string format_number(double value);

} // namespace microspot
