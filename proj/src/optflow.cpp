#include "microspot/optflow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "microspot/binio.hpp"
#include "microspot/errors.hpp"

namespace microspot {

void FlowParams::validate() const {
    if (!(rate_seconds > 0.0)) throw ValidationError("flow: rate must be positive");
    if (!(alpha > 0.0)) throw ValidationError("flow: alpha must be positive");
    if (iterations < 1) throw ValidationError("flow: iteration cap must be >= 1");
    if (!(tolerance > 0.0)) throw ValidationError("flow: tolerance must be positive");
    if (!(sigma >= 0.0)) throw ValidationError("flow: sigma must be nonnegative");
}

std::int64_t FlowParams::rate_frames(double fps) const {
    return std::max<std::int64_t>(1, std::lround(fps * rate_seconds));
}

Image gaussian_blur(const Image& image, double sigma) {
    if (sigma <= 0.0) return image;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double w = std::exp(-(k * k) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = static_cast<float>(w);
        sum += w;
    }
    for (auto& w : kernel) w = static_cast<float>(w / sum);

    const int w = image.width, h = image.height;
    Image tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int k = -radius; k <= radius; ++k) {
                const int xx = std::clamp(x + k, 0, w - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * image.at(xx, y);
            }
            tmp.at(x, y) = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int k = -radius; k <= radius; ++k) {
                const int yy = std::clamp(y + k, 0, h - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(x, yy);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

HornSchunckFlow::HornSchunckFlow(FlowParams params) : params_(params) { params_.validate(); }

FlowField HornSchunckFlow::estimate(const Image& from, const Image& to) const {
    int unused = 0;
    return estimate(from, to, unused);
}

FlowField HornSchunckFlow::estimate(const Image& from, const Image& to, int& iterations_run) const {
    if (!from.same_dims(to)) throw ValidationError("flow: frame dimensions differ");
    const int w = from.width, h = from.height;
    FlowField flow(w, h);
    iterations_run = 0;
    if (w < 3 || h < 3) return flow;

    const Image a = gaussian_blur(from, params_.sigma);
    const Image b = gaussian_blur(to, params_.sigma);
    const std::size_t n = static_cast<std::size_t>(w) * h;

    // Derivatives on the interior only; the 1-px border carries no data term.
    std::vector<float> ix(n, 0.0f), iy(n, 0.0f), it(n, 0.0f), inv(n, 0.0f);
    const float alpha2 = static_cast<float>(params_.alpha * params_.alpha);
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const float gx = 0.25f * (a.at(x + 1, y) - a.at(x - 1, y) + b.at(x + 1, y) - b.at(x - 1, y));
            const float gy = 0.25f * (a.at(x, y + 1) - a.at(x, y - 1) + b.at(x, y + 1) - b.at(x, y - 1));
            ix[i] = gx;
            iy[i] = gy;
            it[i] = b.at(x, y) - a.at(x, y);
            inv[i] = 1.0f / (alpha2 + gx * gx + gy * gy);
        }
    }
    if (std::all_of(it.begin(), it.end(), [](float t) { return t == 0.0f; })) return flow;

    std::vector<float> u(n, 0.0f), v(n, 0.0f), nu(n), nv(n);
    // Classic weighted neighborhood mean: 1/6 edge neighbours, 1/12 diagonals.
    auto local_mean = [&](const std::vector<float>& f, int x, int y) {
        auto at = [&](int xx, int yy) {
            xx = std::clamp(xx, 0, w - 1);
            yy = std::clamp(yy, 0, h - 1);
            return f[static_cast<std::size_t>(yy) * w + xx];
        };
        return (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) * (1.0f / 6.0f) +
               (at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1)) * (1.0f / 12.0f);
    };
    const float edge = 1.0f / 6.0f, diag = 1.0f / 12.0f;

    for (int iter = 0; iter < params_.iterations; ++iter) {
        float max_update = 0.0f;
        for (int y = 0; y < h; ++y) {
            const bool border_row = (y == 0 || y == h - 1);
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                float ub, vb;
                if (border_row || x == 0 || x == w - 1) {
                    ub = local_mean(u, x, y);
                    vb = local_mean(v, x, y);
                } else {
                    const std::size_t up = i - w, down = i + w;
                    ub = (u[i - 1] + u[i + 1] + u[up] + u[down]) * edge +
                         (u[up - 1] + u[up + 1] + u[down - 1] + u[down + 1]) * diag;
                    vb = (v[i - 1] + v[i + 1] + v[up] + v[down]) * edge +
                         (v[up - 1] + v[up + 1] + v[down - 1] + v[down + 1]) * diag;
                }
                const float common = (ix[i] * ub + iy[i] * vb + it[i]) * inv[i];
                nu[i] = ub - ix[i] * common;
                nv[i] = vb - iy[i] * common;
                max_update = std::max({max_update, std::abs(nu[i] - u[i]), std::abs(nv[i] - v[i])});
            }
        }
        u.swap(nu);
        v.swap(nv);
        iterations_run = iter + 1;
        if (max_update < params_.tolerance) break;
    }
    flow.u = std::move(u);
    flow.v = std::move(v);
    return flow;
}

FlowField compute_flow(const Image& from, const Image& to, const FlowParams& params) {
    return HornSchunckFlow(params).estimate(from, to);
}

std::int64_t timesteps_for(std::int64_t length, std::int64_t rate) {
    if (rate < 1 || length < rate + 1) return 0;
    const std::int64_t nominal = std::llround(static_cast<double>(length) / static_cast<double>(rate));
    // Pairs must have distinct frames: start + kR < start + length - 1.
    const std::int64_t distinct = (length - 1 + rate - 1) / rate;
    return std::min(nominal, distinct);
}

std::vector<std::pair<std::int64_t, std::int64_t>> flow_pairs_for_window(const WindowInterval& window,
                                                                        std::int64_t rate) {
    const std::int64_t length = window.end - window.start;
    if (rate < 1 || length < rate + 1) {
        throw ValidationError("flow pairs: window length must be at least rate + 1");
    }
    const std::int64_t n = timesteps_for(length, rate);
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    pairs.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t a = window.start + k * rate;
        const std::int64_t b = std::min(window.start + (k + 1) * rate, window.start + length - 1);
        pairs.emplace_back(a, b);
    }
    return pairs;
}

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write file: " + path.string());
    binio::put_magic(out, "MSFL");
    binio::put<std::uint32_t>(out, 1);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(flow.width));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(flow.height));
    for (float x : flow.u) binio::put<float>(out, x);
    for (float x : flow.v) binio::put<float>(out, x);
}

FlowField read_flow(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open file: " + path.string());
    binio::expect_magic(in, "MSFL", path.string());
    if (binio::get<std::uint32_t>(in) != 1) throw FormatError(path.string() + ": unsupported flow version");
    const auto w = static_cast<int>(binio::get<std::uint32_t>(in));
    const auto h = static_cast<int>(binio::get<std::uint32_t>(in));
    FlowField flow(w, h);
    for (auto& x : flow.u) x = binio::get<float>(in);
    for (auto& x : flow.v) x = binio::get<float>(in);
    return flow;
}

} // namespace microspot
