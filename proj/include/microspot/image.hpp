#pragma once

#include <cstddef>
#include <vector>

namespace microspot {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Row-major grayscale image with intensities in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    bool same_dims(const Image& other) const {
        return width == other.width && height == other.height;
    }

    bool operator==(const Image&) const = default;
};

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 > x0 ? x1 - x0 : 0; }
    int height() const { return y1 > y0 ? y1 - y0 : 0; }
    bool empty() const { return width() == 0 || height() == 0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool intersects(const PixelRect& o) const {
        return !empty() && !o.empty() && x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }

    bool operator==(const PixelRect&) const = default;
};

} // namespace microspot
