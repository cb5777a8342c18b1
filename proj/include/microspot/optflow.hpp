#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "microspot/image.hpp"
#include "microspot/preprocess.hpp"

namespace microspot {

struct FlowParams {
    double rate_seconds = 1.0 / 50.0;
    double alpha = 0.05;      // smoothness weight (intensities in [0,1])
    int iterations = 200;     // cap
    double tolerance = 1e-4;  // max per-pixel update, pixels
    double sigma = 1.0;       // Gaussian pre-smoothing; 0 disables

    void validate() const;
    /// Frame gap R = max(1, round(fps * rate_seconds)).
    std::int64_t rate_frames(double fps) const;
};

/// Per-pixel displacement (u, v) between two frames, row-major.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0f),
          v(static_cast<std::size_t>(w) * h, 0.0f) {}

    float u_at(int x, int y) const { return u[static_cast<std::size_t>(y) * width + x]; }
    float v_at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }

    /// Pixels whose derivatives are valid (excludes the 1-px frame border).
    bool interior(int x, int y) const { return x >= 1 && y >= 1 && x < width - 1 && y < height - 1; }

    bool operator==(const FlowField&) const = default;
};

/// Dense flow estimator interface.
class FlowEstimator {
public:
    virtual ~FlowEstimator() = default;
    virtual FlowField estimate(const Image& from, const Image& to) const = 0;
};

class HornSchunckFlow final : public FlowEstimator {
public:
    explicit HornSchunckFlow(FlowParams params = {});
    FlowField estimate(const Image& from, const Image& to) const override;
    /// Same as estimate(); also reports how many iterations ran.
    FlowField estimate(const Image& from, const Image& to, int& iterations_run) const;

    const FlowParams& params() const { return params_; }

private:
    FlowParams params_;
};

FlowField compute_flow(const Image& from, const Image& to, const FlowParams& params = {});

/// Separable Gaussian blur with replicated borders.
Image gaussian_blur(const Image& image, double sigma);

/// Absolute frame-index pairs (a, b) for the timesteps of one window.
std::vector<std::pair<std::int64_t, std::int64_t>> flow_pairs_for_window(const WindowInterval& window,
                                                                        std::int64_t rate);

/// Number of timesteps a window of `length` frames yields at frame gap `rate`.
std::int64_t timesteps_for(std::int64_t length, std::int64_t rate);

/// Debug dump: "MSFL", u32 version, u32 width, u32 height, then u plane and v plane as f32 LE.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

} // namespace microspot
