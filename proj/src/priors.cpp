#include "cpga/priors.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace cpga::priors {

namespace {

void require_rgb(const Tensor& img, const char* op) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw ShapeError(std::string(op) + ": expected [3,H,W], got " + shape_str(img.shape()));
    }
}

template <typename Cmp>
Tensor channel_extremum(const Tensor& img, Cmp better, const char* op) {
    require_rgb(img, op);
    const int h = img.dim(1), w = img.dim(2);
    const int plane = h * w;
    Tensor out = Tensor::zeros({1, h, w});
    const float* r = img.data();
    const float* g = r + plane;
    const float* b = g + plane;
    float* o = out.data();
    for (int i = 0; i < plane; ++i) {
        float v = r[i];
        if (better(g[i], v)) {
            v = g[i];
        }
        if (better(b[i], v)) {
            v = b[i];
        }
        o[i] = v;
    }
    return out;
}

// Sliding min/max over a clipped 1-D window, applied along rows then columns.
template <typename Cmp>
void window_extremum(std::vector<float>& plane, int h, int w, int radius, Cmp better) {
    if (radius <= 0) {
        return;
    }
    std::vector<float> tmp(plane.size());
    for (int y = 0; y < h; ++y) {
        const float* src = plane.data() + static_cast<size_t>(y) * w;
        float* dst = tmp.data() + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int lo = std::max(0, x - radius), hi = std::min(w - 1, x + radius);
            float v = src[lo];
            for (int i = lo + 1; i <= hi; ++i) {
                if (better(src[i], v)) {
                    v = src[i];
                }
            }
            dst[x] = v;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            const int lo = std::max(0, y - radius), hi = std::min(h - 1, y + radius);
            float v = tmp[static_cast<size_t>(lo) * w + x];
            for (int i = lo + 1; i <= hi; ++i) {
                const float c = tmp[static_cast<size_t>(i) * w + x];
                if (better(c, v)) {
                    v = c;
                }
            }
            plane[static_cast<size_t>(y) * w + x] = v;
        }
    }
}

} // namespace

Tensor dark_channel(const Tensor& img) {
    return channel_extremum(img, [](float a, float b) { return a < b; }, "dark_channel");
}

Tensor bright_channel(const Tensor& img) {
    return channel_extremum(img, [](float a, float b) { return a > b; }, "bright_channel");
}

Tensor dark_channel_patch(const Tensor& img, PatchSpec spec) {
    if (spec.radius < 0) {
        throw ShapeError("dark_channel_patch: radius must be >= 0");
    }
    Tensor out = dark_channel(img);
    window_extremum(out.vec(), img.dim(1), img.dim(2), spec.radius,
                    [](float a, float b) { return a < b; });
    return out;
}

Tensor bright_channel_patch(const Tensor& img, PatchSpec spec) {
    if (spec.radius < 0) {
        throw ShapeError("bright_channel_patch: radius must be >= 0");
    }
    Tensor out = bright_channel(img);
    window_extremum(out.vec(), img.dim(1), img.dim(2), spec.radius,
                    [](float a, float b) { return a > b; });
    return out;
}

Tensor luminance_y(const Tensor& img) {
    require_rgb(img, "luminance_y");
    const int plane = img.dim(1) * img.dim(2);
    Tensor out = Tensor::zeros({1, img.dim(1), img.dim(2)});
    const float* r = img.data();
    const float* g = r + plane;
    const float* b = g + plane;
    float* o = out.data();
    for (int i = 0; i < plane; ++i) {
        o[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    }
    return out;
}

Tensor build_prior_stack(const Tensor& img) {
    require_rgb(img, "build_prior_stack");
    const int h = img.dim(1), w = img.dim(2);
    const int plane = h * w;
    Tensor out = Tensor::zeros({3, h, w});
    const Tensor dark = dark_channel(img);
    const Tensor bright = bright_channel(img);
    const Tensor y = luminance_y(img);
    std::memcpy(out.data(), dark.data(), sizeof(float) * static_cast<size_t>(plane));
    std::memcpy(out.data() + plane, bright.data(), sizeof(float) * static_cast<size_t>(plane));
    std::memcpy(out.data() + 2 * plane, y.data(), sizeof(float) * static_cast<size_t>(plane));
    return out;
}

} // namespace cpga::priors
