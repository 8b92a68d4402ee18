#pragma once

#include "cpga/model.hpp"
#include "cpga/tensor.hpp"

namespace cpga::loss {

struct LossWeights {
    float l1 = 1.0f;
    float perceptual = 0.01f;
    float kd = 0.1f;
};

// Fixed multi-scale filter bank standing in for a pretrained perceptual
// extractor: per scale (1, 2, 4) the Gaussian-blurred luminance plus its
// horizontal and vertical gradient planes. Deterministic, no learnable
// parameters, fully differentiable w.r.t. the image.
class ProxyFeatureExtractor {
public:
    ProxyFeatureExtractor();

    // One [3,h/s,w/s] feature tensor per scale.
    std::vector<Tensor> features(const Tensor& img) const;

private:
    Tensor lum_w_, lum_b_;   // 1x1 conv, BT.601 weights
    Tensor blur_w_, blur_b_; // 5x5 Gaussian, sigma 1
    Tensor gx_w_, gy_w_, grad_b_;
};

// Mean absolute difference.
Tensor l1_loss(const Tensor& a, const Tensor& b);

// Mean squared difference.
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Mean squared feature difference, averaged over scales.
Tensor perceptual_proxy_loss(const Tensor& a, const Tensor& b, const ProxyFeatureExtractor& psi);

// Sum of component MSEs over {gamma, airlight, intersection}. Teacher
// components are bilinearly resized when the student runs at a reduced
// resolution.
Tensor kd_loss(const model::EnhancedOutput& teacher, const model::EnhancedOutput& student);

// weights.l1 * L1 + weights.perceptual * L_per (perceptual skipped when its
// weight is zero).
Tensor enhance_loss(const Tensor& prediction, const Tensor& ground_truth, const LossWeights& w,
                    const ProxyFeatureExtractor& psi);

// enhance_loss + weights.kd * kd_loss.
Tensor total_loss_dgf(const model::EnhancedOutput& student, const Tensor& ground_truth,
                      const model::EnhancedOutput& teacher, const LossWeights& w,
                      const ProxyFeatureExtractor& psi);

} // namespace cpga::loss
