#pragma once

#include "cpga/tensor.hpp"

namespace cpga::gf {

struct GuidedFilterParams {
    int radius = 1;    // box window at low resolution
    float eps = 1e-2f; // regularizer on the guide variance
};

// Fast guided filter: fits a per-pixel affine model a*guide+b at low
// resolution (least squares over the clipped box window), upsamples the
// coefficients bilinearly and applies them to the full-resolution guide.
// Composed entirely of differentiable primitives, so gradients flow to
// src_low when recorded on a tape.
Tensor fast_guided_filter(const Tensor& guide_low, const Tensor& src_low,
                          const Tensor& guide_full, const GuidedFilterParams& p);

} // namespace cpga::gf
