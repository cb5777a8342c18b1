#include "microspot/features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "microspot/binio.hpp"
#include "microspot/errors.hpp"

namespace microspot {

void HoofParams::validate() const {
    if (bins < 2) throw ValidationError("hoof: need at least 2 bins");
    if (!(min_magnitude >= 0.0)) throw ValidationError("hoof: min magnitude must be >= 0");
}

std::vector<double> hoof_mass(std::span<const FlowVector> vectors, const HoofParams& params) {
    params.validate();
    const int bins = params.bins;
    const double two_pi = 2.0 * std::numbers::pi;
    const double bin_width = two_pi / bins;
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    for (const auto& vec : vectors) {
        if (!std::isfinite(vec.u) || !std::isfinite(vec.v)) {
            throw ValidationError("hoof: non-finite flow vector");
        }
        const double magnitude = std::hypot(vec.u, vec.v);
        if (magnitude == 0.0 || magnitude <= params.min_magnitude) continue;
        double angle = std::atan2(vec.v, vec.u);
        if (angle < 0.0) angle += two_pi;
        if (angle >= two_pi) angle -= two_pi;
        const double position = angle / bin_width;
        const double lower = std::floor(position);
        const double frac = position - lower;
        const int b0 = static_cast<int>(lower) % bins;
        const int b1 = (b0 + 1) % bins;
        hist[static_cast<std::size_t>(b0)] += magnitude * (1.0 - frac);
        hist[static_cast<std::size_t>(b1)] += magnitude * frac;
    }
    return hist;
}

std::vector<double> hoof(std::span<const FlowVector> vectors, const HoofParams& params) {
    auto hist = hoof_mass(vectors, params);
    double total = 0.0;
    for (double m : hist) total += m;
    if (total > 0.0) {
        for (double& m : hist) m /= total;
    }
    return hist;
}

std::vector<FlowVector> pool_roi(const FlowField& flow, const Region& region) {
    std::vector<FlowVector> out;
    for (const auto& box : region.boxes) {
        for (int y = std::max(box.y0, 1); y < std::min(box.y1, flow.height - 1); ++y) {
            for (int x = std::max(box.x0, 1); x < std::min(box.x1, flow.width - 1); ++x) {
                // Pixels shared by overlapping boxes count once.
                bool seen = false;
                for (const auto& earlier : region.boxes) {
                    if (&earlier == &box) break;
                    if (earlier.contains(x, y)) {
                        seen = true;
                        break;
                    }
                }
                if (!seen) out.push_back({flow.u_at(x, y), flow.v_at(x, y)});
            }
        }
    }
    if (out.empty()) throw DegenerateGeometryError("ROI has no pixels inside the valid flow interior");
    return out;
}

std::vector<float> timestep_features(const FlowField& flow, const RoiSet& rois, const HoofParams& params) {
    std::vector<float> row;
    row.reserve(static_cast<std::size_t>(kRoiCount * params.bins));
    for (const auto& region : rois.regions) {
        const auto vectors = pool_roi(flow, region);
        for (double value : hoof(vectors, params)) row.push_back(static_cast<float>(value));
    }
    return row;
}

HoofSequence build_sequence(const WindowInterval& window, std::span<const Image> frames, const RoiSet& rois,
                            std::int64_t rate, const FlowEstimator& estimator, const HoofParams& params) {
    if (static_cast<std::int64_t>(frames.size()) != window.end - window.start) {
        throw ValidationError("build_sequence: frame count does not match window length");
    }
    const auto pairs = flow_pairs_for_window(window, rate);
    HoofSequence seq;
    seq.window = window;
    seq.timesteps = static_cast<std::int64_t>(pairs.size());
    seq.dims = kRoiCount * params.bins;
    seq.values.reserve(static_cast<std::size_t>(seq.timesteps * seq.dims));
    for (const auto& [a, b] : pairs) {
        const auto flow = estimator.estimate(frames[static_cast<std::size_t>(a - window.start)],
                                             frames[static_cast<std::size_t>(b - window.start)]);
        const auto row = timestep_features(flow, rois, params);
        seq.values.insert(seq.values.end(), row.begin(), row.end());
    }
    return seq;
}

void write_features(const std::filesystem::path& path, const VideoFeatures& f) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write file: " + path.string());
    binio::put_magic(out, "MSFC");
    binio::put<std::uint32_t>(out, 1);
    binio::put_string(out, f.video_id);
    binio::put_string(out, f.subject_id);
    binio::put<double>(out, f.fps);
    binio::put<std::int64_t>(out, f.frame_count);
    binio::put<std::int64_t>(out, f.geometry.length);
    binio::put<std::int64_t>(out, f.geometry.overlap);
    binio::put<std::int64_t>(out, f.geometry.stride);
    binio::put<std::int64_t>(out, f.rate);
    binio::put<std::int64_t>(out, f.timesteps);
    binio::put<std::int64_t>(out, f.dims);
    binio::put<std::uint64_t>(out, f.params_hash);
    binio::put<std::uint64_t>(out, f.sequences.size());
    for (const auto& s : f.sequences) {
        if (s.timesteps != f.timesteps || s.dims != f.dims ||
            s.values.size() != static_cast<std::size_t>(f.timesteps * f.dims)) {
            throw ConsistencyError("feature cache: sequence shape differs from header");
        }
        binio::put<std::int64_t>(out, s.window.start);
        binio::put<std::int64_t>(out, s.window.end);
        for (float v : s.values) binio::put<float>(out, v);
    }
    if (!out) throw LoadError("write failed: " + path.string());
}

VideoFeatures read_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open file: " + path.string());
    binio::expect_magic(in, "MSFC", path.string());
    if (binio::get<std::uint32_t>(in) != 1) throw FormatError(path.string() + ": unsupported feature version");
    VideoFeatures f;
    f.video_id = binio::get_string(in);
    f.subject_id = binio::get_string(in);
    f.fps = binio::get<double>(in);
    f.frame_count = binio::get<std::int64_t>(in);
    f.geometry.length = binio::get<std::int64_t>(in);
    f.geometry.overlap = binio::get<std::int64_t>(in);
    f.geometry.stride = binio::get<std::int64_t>(in);
    f.rate = binio::get<std::int64_t>(in);
    f.timesteps = binio::get<std::int64_t>(in);
    f.dims = binio::get<std::int64_t>(in);
    f.params_hash = binio::get<std::uint64_t>(in);
    const auto count = binio::get<std::uint64_t>(in);
    if (f.timesteps < 0 || f.dims < 0 || f.timesteps * f.dims > (1 << 24) || count > (1u << 24)) {
        throw FormatError(path.string() + ": implausible feature dimensions");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        HoofSequence s;
        s.window.video_id = f.video_id;
        s.window.index = static_cast<std::int64_t>(i);
        s.window.start = binio::get<std::int64_t>(in);
        s.window.end = binio::get<std::int64_t>(in);
        s.timesteps = f.timesteps;
        s.dims = f.dims;
        s.values.resize(static_cast<std::size_t>(f.timesteps * f.dims));
        for (auto& v : s.values) v = binio::get<float>(in);
        f.sequences.push_back(std::move(s));
    }
    return f;
}

} // namespace microspot
