#pragma once

#include "cpga/tensor.hpp"

namespace cpga::priors {

// Window spec for the patch-wise prior variants; side length is 2*radius+1,
// clipped at image borders.
struct PatchSpec {
    int radius = 0;
};

// Per-pixel channel extrema and BT.601 luminance. Pure functions producing
// leaf tensors; the stack feeds transmission estimation as network input.
Tensor dark_channel(const Tensor& img);
Tensor bright_channel(const Tensor& img);
Tensor dark_channel_patch(const Tensor& img, PatchSpec spec);
Tensor bright_channel_patch(const Tensor& img, PatchSpec spec);
Tensor luminance_y(const Tensor& img);

// Planes stacked in fixed order [dark, bright, Y]; the order is part of the
// checkpoint contract.
Tensor build_prior_stack(const Tensor& img);

} // namespace cpga::priors
