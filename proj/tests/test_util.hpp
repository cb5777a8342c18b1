#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "microspot/image.hpp"

namespace testutil {

/// Directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "microspot-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

/// Smooth random texture: uniform noise blurred by a separable Gaussian, then
/// rescaled to [0.1, 0.9]. Uses std:: facilities only so it is independent of
/// the library under test.
inline microspot::Image textured_image(int width, int height, unsigned seed, double blur_sigma = 3.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> raw(static_cast<std::size_t>(width) * height);
    for (auto& v : raw) v = dist(gen);

    const int radius = static_cast<int>(std::ceil(3 * blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-k * k / (2 * blur_sigma * blur_sigma));
        ksum += kernel[k + radius];
    }
    for (auto& k : kernel) k /= ksum;
    auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
    auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
    std::vector<double> tmp(raw.size()), out(raw.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * raw[idx(wrap(x + k, width), y)];
            tmp[idx(x, y)] = s;
        }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * tmp[idx(x, wrap(y + k, height))];
            out[idx(x, y)] = s;
        }
    double lo = 1e9, hi = -1e9;
    for (double v : out) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    microspot::Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) img.pixels[i] = static_cast<float>(0.1 + 0.8 * (out[i] - lo) / (hi - lo));
    return img;
}

/// Crop of `src` starting at (x0, y0).
inline microspot::Image crop(const microspot::Image& src, int x0, int y0, int width, int height) {
    microspot::Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            img.pixels[static_cast<std::size_t>(y) * width + x] = src.pixels[static_cast<std::size_t>(y + y0) * src.width + x + x0];
    return img;
}

/// Pair of frames where content moves by (dx, dy) pixels from the first to the second.
inline std::pair<microspot::Image, microspot::Image> shifted_pair(int size, int dx, int dy, unsigned seed) {
    const int pad = 16;
    const auto big = textured_image(size + 2 * pad, size + 2 * pad, seed);
    return {crop(big, pad, pad, size, size), crop(big, pad - dx, pad - dy, size, size)};
}

inline microspot::Image constant_image(int width, int height, float value) {
    microspot::Image img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<std::size_t>(width) * height, value);
    return img;
}

} // namespace testutil
