#include "microspot/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "microspot/errors.hpp"

namespace microspot {

WindowGeometry resolve_windows(const WindowParams& params, double fps) {
    if (!(fps > 0.0)) throw ValidationError("fps must be positive");
    WindowGeometry g;
    g.length = std::lround(params.window_seconds * fps);
    g.overlap = std::lround(params.overlap_seconds * fps);
    if (!(g.overlap > 0 && g.overlap < g.length)) {
        throw ValidationError("window params: need 0 < overlap (" + std::to_string(g.overlap) +
                              ") < window length (" + std::to_string(g.length) + ")");
    }
    g.stride = g.length - g.overlap;
    return g;
}

Point2 AlignmentTransform::apply(Point2 p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = p.x - center.x, dy = p.y - center.y;
    return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

Point2 AlignmentTransform::invert(Point2 p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = p.x - center.x, dy = p.y - center.y;
    return {center.x + c * dx + s * dy, center.y - s * dx + c * dy};
}

bool Region::contains(int x, int y) const {
    return std::any_of(boxes.begin(), boxes.end(), [&](const PixelRect& r) { return r.contains(x, y); });
}

bool Region::intersects(const Region& other) const {
    for (const auto& a : boxes) {
        for (const auto& b : other.boxes) {
            if (a.intersects(b)) return true;
        }
    }
    return false;
}

std::int64_t Region::pixel_count() const {
    std::int64_t count = 0;
    if (boxes.empty()) return 0;
    int x0 = boxes[0].x0, y0 = boxes[0].y0, x1 = boxes[0].x1, y1 = boxes[0].y1;
    for (const auto& b : boxes) {
        x0 = std::min(x0, b.x0);
        y0 = std::min(y0, b.y0);
        x1 = std::max(x1, b.x1);
        y1 = std::max(y1, b.y1);
    }
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) count += contains(x, y) ? 1 : 0;
    }
    return count;
}

bool RoiSet::pairwise_disjoint() const {
    for (std::size_t i = 0; i < regions.size(); ++i) {
        for (std::size_t j = i + 1; j < regions.size(); ++j) {
            if (regions[i].intersects(regions[j])) return false;
        }
    }
    return true;
}

EyeCenters eye_centers(const Landmarks& landmarks) {
    for (const auto& p : landmarks) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw ValidationError("landmarks contain non-finite coordinates");
        }
    }
    EyeCenters centers;
    for (int i = 0; i < 6; ++i) {
        centers.left.x += landmarks[36 + i].x;
        centers.left.y += landmarks[36 + i].y;
        centers.right.x += landmarks[42 + i].x;
        centers.right.y += landmarks[42 + i].y;
    }
    centers.left = {centers.left.x / 6.0, centers.left.y / 6.0};
    centers.right = {centers.right.x / 6.0, centers.right.y / 6.0};
    return centers;
}

AlignmentTransform compute_alignment(Point2 left, Point2 right, std::int64_t source_frame) {
    const double dx = right.x - left.x, dy = right.y - left.y;
    if (std::hypot(dx, dy) < 1e-9) throw DegenerateGeometryError("eye centers coincide");
    AlignmentTransform t;
    t.angle = -std::atan2(dy, dx);
    t.center = {(left.x + right.x) / 2.0, (left.y + right.y) / 2.0};
    t.source_frame = source_frame;
    return t;
}

Image apply_alignment(const Image& frame, const AlignmentTransform& transform) {
    if (transform.angle == 0.0) return frame;
    Image out(frame.width, frame.height);
    auto pixel = [&](int x, int y) -> double {
        if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return 0.0;
        return frame.at(x, y);
    };
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            const Point2 src = transform.invert({static_cast<double>(x), static_cast<double>(y)});
            const double fx0 = std::floor(src.x), fy0 = std::floor(src.y);
            const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
            const double ax = src.x - fx0, ay = src.y - fy0;
            const double top = pixel(x0, y0) * (1 - ax) + pixel(x0 + 1, y0) * ax;
            const double bottom = pixel(x0, y0 + 1) * (1 - ax) + pixel(x0 + 1, y0 + 1) * ax;
            out.at(x, y) = static_cast<float>(top * (1 - ay) + bottom * ay);
        }
    }
    return out;
}

std::vector<Image> apply_alignment(std::span<const Image> frames, const AlignmentTransform& transform) {
    std::vector<Image> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(apply_alignment(f, transform));
    return out;
}

std::vector<WindowInterval> generate_windows(std::int64_t frame_count, const WindowGeometry& geometry,
                                             const std::string& video_id) {
    if (geometry.length < 1 || geometry.stride < 1) throw ValidationError("invalid window geometry");
    if (frame_count < geometry.length) {
        throw TooShortError("video " + video_id + " has " + std::to_string(frame_count) +
                            " frames, fewer than the window length " + std::to_string(geometry.length));
    }
    std::vector<WindowInterval> windows;
    const std::int64_t count = (frame_count - geometry.length) / geometry.stride + 1;
    for (std::int64_t j = 0; j < count; ++j) {
        const std::int64_t start = j * geometry.stride;
        windows.push_back({video_id, j, start, start + geometry.length});
    }
    // Tail window so movements near the end of the video are still covered.
    if (windows.back().end < frame_count) {
        windows.push_back({video_id, count, frame_count - geometry.length, frame_count});
    }
    return windows;
}

PixelRect to_pixel_rect(double x_lo, double y_lo, double x_hi, double y_hi, int width, int height) {
    auto clamp_to = [](double v, int hi) {
        return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi)));
    };
    PixelRect r;
    r.x0 = clamp_to(std::ceil(x_lo), width);
    r.y0 = clamp_to(std::ceil(y_lo), height);
    r.x1 = clamp_to(std::floor(x_hi) + 1.0, width);
    r.y1 = clamp_to(std::floor(y_hi) + 1.0, height);
    if (r.x1 < r.x0) r.x1 = r.x0;
    if (r.y1 < r.y0) r.y1 = r.y0;
    return r;
}

RoiSet extract_rois(const Landmarks& landmarks, const AlignmentTransform& transform, int width,
                    int height, const RoiParams& params) {
    Landmarks aligned{};
    for (int i = 0; i < kLandmarkCount; ++i) aligned[i] = transform.apply(landmarks[i]);
    const auto eyes = eye_centers(aligned);
    const double iod = std::hypot(eyes.right.x - eyes.left.x, eyes.right.y - eyes.left.y);
    if (iod < 1e-6) throw DegenerateGeometryError("inter-ocular distance collapsed");

    auto bounds = [&](int first, int last) {
        double x_lo = aligned[first].x, x_hi = x_lo, y_lo = aligned[first].y, y_hi = y_lo;
        for (int i = first; i <= last; ++i) {
            x_lo = std::min(x_lo, aligned[i].x);
            x_hi = std::max(x_hi, aligned[i].x);
            y_lo = std::min(y_lo, aligned[i].y);
            y_hi = std::max(y_hi, aligned[i].y);
        }
        return std::array<double, 4>{x_lo, y_lo, x_hi, y_hi};
    };

    const double margin = params.brow_margin * iod;
    RoiSet rois;
    // Brows grow upward and away from the face midline.
    const auto left = bounds(17, 21);
    rois.regions[0].boxes.push_back(
        to_pixel_rect(left[0] - margin, left[1] - margin, left[2], left[3], width, height));
    const auto right = bounds(22, 26);
    rois.regions[1].boxes.push_back(
        to_pixel_rect(right[0], right[1] - margin, right[2] + margin, right[3], width, height));

    const double half = params.mouth_box * iod / 2.0;
    for (int corner : {48, 54}) {
        const Point2 c = aligned[corner];
        rois.regions[2].boxes.push_back(
            to_pixel_rect(c.x - half, c.y - half, c.x + half, c.y + half, width, height));
    }
    return rois;
}

std::vector<PreparedWindow> prepare_windows(const FrameSequence& sequence, const LandmarkSet& landmarks,
                                            const WindowParams& window_params,
                                            const RoiParams& roi_params) {
    const auto geometry = resolve_windows(window_params, sequence.fps);
    const auto windows = generate_windows(sequence.frame_count(), geometry, sequence.video_id);
    std::vector<PreparedWindow> prepared;
    prepared.reserve(windows.size());
    for (const auto& w : windows) {
        const auto& marks = landmarks.for_frame(w.start);
        const auto eyes = eye_centers(marks);
        PreparedWindow p;
        p.window = w;
        p.transform = compute_alignment(eyes.left, eyes.right, w.start);
        p.rois = extract_rois(marks, p.transform, sequence.width(), sequence.height(), roi_params);
        prepared.push_back(std::move(p));
    }
    return prepared;
}

} // namespace microspot
