#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "microspot/dataio.hpp"
#include "microspot/image.hpp"
#include "microspot/interval.hpp"

namespace microspot {

/// Sliding-window timing in seconds; resolved to frames per video.
struct WindowParams {
    double window_seconds = 0.5;
    double overlap_seconds = 0.3;
};

/// Window timing in frames for one frame rate.
struct WindowGeometry {
    std::int64_t length = 0;   // |W|
    std::int64_t overlap = 0;
    std::int64_t stride = 0;   // |W| - overlap
};

/// Throws ValidationError unless 0 < overlap < length.
WindowGeometry resolve_windows(const WindowParams& params, double fps);

struct WindowInterval {
    std::string video_id;
    std::int64_t index = 0;
    std::int64_t start = 0;
    std::int64_t end = 0;

    Interval interval() const { return {start, end}; }
    bool operator==(const WindowInterval&) const = default;
};

/// Rotation by `angle` radians about `center`, derived from `source_frame`.
struct AlignmentTransform {
    double angle = 0.0;
    Point2 center;
    std::int64_t source_frame = 0;

    /// Maps a source-image point into aligned coordinates.
    Point2 apply(Point2 p) const;
    /// Maps an aligned-image point back to source coordinates.
    Point2 invert(Point2 p) const;
};

/// A region made of one or more pixel boxes; membership is their union.
struct Region {
    std::vector<PixelRect> boxes;

    bool contains(int x, int y) const;
    bool intersects(const Region& other) const;
    std::int64_t pixel_count() const;
};

/// ROI 0: left brow, ROI 1: right brow, ROI 2: both mouth corners.
struct RoiSet {
    std::array<Region, 3> regions;

    bool pairwise_disjoint() const;
};

struct RoiParams {
    double brow_margin = 0.15;  // x inter-ocular distance
    double mouth_box = 0.5;     // side, x inter-ocular distance
};

struct EyeCenters {
    Point2 left;   // mean of points 36-41
    Point2 right;  // mean of points 42-47
};

EyeCenters eye_centers(const Landmarks& landmarks);

AlignmentTransform compute_alignment(Point2 left, Point2 right, std::int64_t source_frame = 0);

Image apply_alignment(const Image& frame, const AlignmentTransform& transform);

/// Aligns every frame of a window with the same transform.
std::vector<Image> apply_alignment(std::span<const Image> frames, const AlignmentTransform& transform);

std::vector<WindowInterval> generate_windows(std::int64_t frame_count, const WindowGeometry& geometry,
                                             const std::string& video_id = {});

RoiSet extract_rois(const Landmarks& landmarks, const AlignmentTransform& transform, int width,
                    int height, const RoiParams& params = {});

/// Converts a continuous box [x_lo,x_hi] x [y_lo,y_hi] to the pixels whose
/// centers it covers, clamped to the frame.
PixelRect to_pixel_rect(double x_lo, double y_lo, double x_hi, double y_hi, int width, int height);

/// Everything needed to turn one window into features.
struct PreparedWindow {
    WindowInterval window;
    AlignmentTransform transform;
    RoiSet rois;
};

/// Alignment and ROIs for every window of a video, taken from each window's first frame.
std::vector<PreparedWindow> prepare_windows(const FrameSequence& sequence, const LandmarkSet& landmarks,
                                            const WindowParams& window_params,
                                            const RoiParams& roi_params = {});

} // namespace microspot
