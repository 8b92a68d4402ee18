#pragma once

#include "cpga/tensor.hpp"

namespace cpga::metrics {

// 10*log10(peak^2 / MSE) in dB; +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Single-scale SSIM on the BT.601 luminance plane: 11x11 Gaussian window
// (sigma 1.5), C1=(0.01*peak)^2, C2=(0.03*peak)^2, averaged over valid
// window positions. Images smaller than the window are rejected.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

} // namespace cpga::metrics
