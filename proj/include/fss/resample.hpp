#pragma once

// Separable resampling kernels on half-pixel centres (align_corners = false).
// Used for image/mask resizing, logit upsampling and positional-embedding
// interpolation.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fss/datamodel.hpp"

namespace fss {

/// Output sample i of a 1-D linear resize reads in[i0] and in[i1].
struct LinearTap {
    int i0 = 0;
    int i1 = 0;
    double w1 = 0.0;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<LinearTap> linear_taps(int in, int out) {
    if (in < 1 || out < 1) throw ShapeError("linear_taps: sizes must be positive");
    std::vector<LinearTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(i)] = {i0, i1, src - i0};
    }
    return taps;
}

inline int nearest_index(int i, int in, int out) {
    const int src = static_cast<int>(std::floor((i + 0.5) * static_cast<double>(in) / out));
    return std::clamp(src, 0, in - 1);
}

/// Four-tap bicubic (Keys, a = -0.75) with clamped borders. Taps are stored
/// relative to an anchor so that sum(w) == 1 holds exactly in the
/// delta form  out = x[anchor] + sum_j w_j (x[j] - x[anchor]).
struct CubicTap {
    std::array<int, 4> idx{};
    std::array<double, 4> w{};
    int anchor = 1;
};

inline double cubic_kernel(double x, double a = -0.75) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

inline std::vector<CubicTap> cubic_taps(int in, int out) {
    if (in < 1 || out < 1) throw ShapeError("cubic_taps: sizes must be positive");
    std::vector<CubicTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double src = (i + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(src));
        const double t = src - base;
        CubicTap tap;
        for (int j = 0; j < 4; ++j) {
            tap.idx[j] = std::clamp(base - 1 + j, 0, in - 1);
            tap.w[j] = cubic_kernel(t - (j - 1));
        }
        taps[static_cast<std::size_t>(i)] = tap;
    }
    return taps;
}

inline Image resize_bilinear(const Image& img, int height, int width) {
    if (height < 1 || width < 1) throw ShapeError("resize: non-positive resolution");
    if (height == img.height() && width == img.width()) return img;
    const auto ty = linear_taps(img.height(), height);
    const auto tx = linear_taps(img.width(), width);
    Image out(height, width, img.channels());
    for (int y = 0; y < height; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const auto& b = tx[static_cast<std::size_t>(x)];
            for (int c = 0; c < img.channels(); ++c) {
                const double top = (1.0 - b.w1) * img.at(a.i0, b.i0, c) + b.w1 * img.at(a.i0, b.i1, c);
                const double bot = (1.0 - b.w1) * img.at(a.i1, b.i0, c) + b.w1 * img.at(a.i1, b.i1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - a.w1) * top + a.w1 * bot);
            }
        }
    }
    return out;
}

inline LabelMask resize_nearest(const LabelMask& mask, int height, int width) {
    if (height < 1 || width < 1) throw ShapeError("resize: non-positive resolution");
    if (height == mask.height() && width == mask.width()) return mask;
    LabelMask out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = nearest_index(y, mask.height(), height);
        for (int x = 0; x < width; ++x) out.at(y, x) = mask.at(sy, nearest_index(x, mask.width(), width));
    }
    return out;
}

}  // namespace fss
