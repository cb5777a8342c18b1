#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "microspot/optflow.hpp"
#include "microspot/preprocess.hpp"

namespace microspot {

inline constexpr int kRoiCount = 3;
inline constexpr int kDefaultBins = 8;

struct FlowVector {
    double u = 0.0;
    double v = 0.0;
};

struct HoofParams {
    int bins = kDefaultBins;
    double min_magnitude = 0.0;  // vectors at or below are ignored when > 0

    void validate() const;
};

/// Unnormalized soft-binned mass: each vector's magnitude split linearly
/// between the two orientation bins whose centers (2*pi*b/B) bracket its angle.
std::vector<double> hoof_mass(std::span<const FlowVector> vectors, const HoofParams& params = {});

/// L1-normalized histogram; all zeros when no vector carries mass.
std::vector<double> hoof(std::span<const FlowVector> vectors, const HoofParams& params = {});

/// Interior flow vectors inside the region. Throws DegenerateGeometryError if none.
std::vector<FlowVector> pool_roi(const FlowField& flow, const Region& region);

/// Concatenated histograms of the three ROIs for one flow field.
std::vector<float> timestep_features(const FlowField& flow, const RoiSet& rois, const HoofParams& params = {});

/// Feature tensor of one window: timesteps x dims, row-major.
struct HoofSequence {
    WindowInterval window;
    std::int64_t timesteps = 0;
    std::int64_t dims = 0;
    std::vector<float> values;
    std::optional<bool> label;

    float at(std::int64_t t, std::int64_t d) const { return values[static_cast<std::size_t>(t * dims + d)]; }
    std::span<const float> row(std::int64_t t) const {
        return {values.data() + t * dims, static_cast<std::size_t>(dims)};
    }
};

/// Computes flow for each timestep pair of an aligned window and bins it per ROI.
/// `frames` holds the window's frames in order (frames[0] is window.start).
HoofSequence build_sequence(const WindowInterval& window, std::span<const Image> frames, const RoiSet& rois,
                            std::int64_t rate, const FlowEstimator& estimator, const HoofParams& params = {});

/// Per-video feature cache.
struct VideoFeatures {
    std::string video_id;
    std::string subject_id;
    double fps = 0.0;
    WindowGeometry geometry;
    std::int64_t rate = 0;
    std::int64_t timesteps = 0;
    std::int64_t dims = 0;
    std::uint64_t params_hash = 0;
    std::int64_t frame_count = 0;
    std::vector<HoofSequence> sequences;
};

/// Binary layout (little-endian): "MSFC", u32 version, string video_id, string
/// subject_id, f64 fps, i64 frame_count, i64 window length/overlap/stride, i64 rate,
/// i64 timesteps, i64 dims, u64 params hash, u64 window count, then per window
/// i64 start, i64 end, timesteps*dims f32 row-major. Strings are u32 length + bytes.
void write_features(const std::filesystem::path& path, const VideoFeatures& features);
VideoFeatures read_features(const std::filesystem::path& path);

} // namespace microspot
