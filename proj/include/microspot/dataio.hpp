#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "microspot/image.hpp"
#include "microspot/interval.hpp"

namespace microspot {

inline constexpr int kLandmarkCount = 68;

using Landmarks = std::array<Point2, kLandmarkCount>;

/// One video: ordered grayscale frames plus identity and frame rate.
struct FrameSequence {
    std::string video_id;
    std::string subject_id;
    double fps = 0.0;
    std::vector<Image> frames;

    int width() const { return frames.empty() ? 0 : frames.front().width; }
    int height() const { return frames.empty() ? 0 : frames.front().height; }
    std::int64_t frame_count() const { return static_cast<std::int64_t>(frames.size()); }

    /// Throws ValidationError when the sequence breaks its invariants.
    void validate() const;
};

/// Landmarks keyed by 0-based frame index. A set holding only frame 0 is
/// static: those points apply to every frame.
struct LandmarkSet {
    std::string video_id;
    std::map<std::int64_t, Landmarks> frames;

    bool is_static() const { return frames.size() == 1 && frames.begin()->first == 0; }
    const Landmarks& for_frame(std::int64_t frame) const;
};

/// Ground-truth micro-movement with 1-based inclusive onset/apex/offset.
struct GroundTruthEntry {
    std::string video_id;
    std::string subject_id;
    std::int64_t onset = 0;
    std::int64_t apex = 0;
    std::int64_t offset = 0;
    std::string au_codes;

    /// [onset-1, offset) in 0-based half-open form.
    Interval interval() const { return {onset - 1, offset}; }
};

struct ManifestVideo {
    std::string video_id;
    std::string subject_id;
    std::filesystem::path frame_dir;
    double fps = 0.0;
    std::filesystem::path landmark_file;
};

struct DatasetManifest {
    std::vector<ManifestVideo> videos;
    std::filesystem::path ground_truth_file;

    const ManifestVideo& video(const std::string& video_id) const;
};

struct Dataset {
    std::vector<FrameSequence> sequences;
    std::vector<LandmarkSet> landmarks;
    std::vector<GroundTruthEntry> ground_truth;
};

/// Knobs for the desk-scale synthetic dataset generator.
struct SyntheticSpec {
    std::uint64_t seed = 7;
    int n_subjects = 4;
    int n_videos = 6;
    int frames_per_video = 1000;
    double fps = 200.0;
    int width = 128;
    int height = 128;
    int n_movements = 3;
    double amplitude = 2.5;  // peak displacement, pixels
    int duration_min = 40;   // frames
    int duration_max = 90;
    double noise_std = 0.004;
    double window_seconds = 0.5;
    // Forces every planted movement into one region / direction when set.
    // Region indices: 0 left brow, 1 right brow, 2 mouth (both corners).
    std::optional<int> region;
    std::optional<double> direction_radians;

    void validate() const;
};

// ---- manifest / loading ----

/// Parses a manifest JSON file; relative paths resolve against its directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Image files (png/pgm/ppm) in `dir`, sorted by name. Throws LoadError if `dir` is missing.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);
FrameSequence load_frames(const ManifestVideo& video);
LandmarkSet load_landmarks(const std::filesystem::path& path, const std::string& video_id);
std::vector<GroundTruthEntry> load_ground_truth(const std::filesystem::path& path);

/// Loads every video; checks landmark and ground-truth cross references.
Dataset load_dataset(const DatasetManifest& manifest);

/// Checks ground-truth rows against the known per-video frame counts.
void validate_ground_truth(const std::vector<GroundTruthEntry>& entries,
                           const std::map<std::string, std::int64_t>& frame_counts);

// ---- writing ----

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks);
void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<GroundTruthEntry>& entries);
void write_frames(const std::filesystem::path& dir, const FrameSequence& sequence);

/// Writes `dataset` under `root` (manifest.json, frames/, landmarks/, ground_truth.csv).
DatasetManifest write_dataset(const std::filesystem::path& root, const Dataset& dataset);

// ---- synthetic data ----

/// Canonical 68-point face layout scaled to the given frame size.
Landmarks synthetic_landmarks(int width, int height);

/// Generates one video of the synthetic dataset (index in [0, n_videos)).
/// The returned ground truth covers only that video.
Dataset generate_synthetic_video(const SyntheticSpec& spec, int index);

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Writes the synthetic dataset to disk one video at a time.
DatasetManifest write_synthetic(const std::filesystem::path& root, const SyntheticSpec& spec);

} // namespace microspot
