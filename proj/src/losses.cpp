#include "cpga/losses.hpp"

#include <algorithm>
#include <cmath>

namespace cpga::loss {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Tensor fixed(Shape shape, std::vector<float> v) {
    return Tensor::from_vector(std::move(shape), std::move(v));
}

} // namespace

ProxyFeatureExtractor::ProxyFeatureExtractor() {
    lum_w_ = fixed({1, 3, 1, 1}, {0.299f, 0.587f, 0.114f});
    lum_b_ = Tensor::zeros({1});

    // 5x5 Gaussian, sigma 1, normalized to unit sum.
    std::vector<float> g(25);
    double total = 0.0;
    for (int y = -2; y <= 2; ++y) {
        for (int x = -2; x <= 2; ++x) {
            const double v = std::exp(-(x * x + y * y) / 2.0);
            g[static_cast<size_t>((y + 2) * 5 + (x + 2))] = static_cast<float>(v);
            total += v;
        }
    }
    for (float& v : g) {
        v = static_cast<float>(v / total);
    }
    blur_w_ = fixed({1, 1, 5, 5}, std::move(g));
    blur_b_ = Tensor::zeros({1});

    gx_w_ = fixed({1, 1, 3, 3}, {0, 0, 0, -0.5f, 0, 0.5f, 0, 0, 0});
    gy_w_ = fixed({1, 1, 3, 3}, {0, -0.5f, 0, 0, 0, 0, 0, 0.5f, 0});
    grad_b_ = Tensor::zeros({1});
}

std::vector<Tensor> ProxyFeatureExtractor::features(const Tensor& img) const {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw ShapeError("ProxyFeatureExtractor: expected [3,H,W], got " + shape_str(img.shape()));
    }
    std::vector<Tensor> out;
    out.reserve(3);
    for (int scale : {1, 2, 4}) {
        const int h = std::max(1, img.dim(1) / scale);
        const int w = std::max(1, img.dim(2) / scale);
        const Tensor scaled = scale == 1 ? img : resize_bilinear(img, h, w);
        const Tensor lum = conv2d(scaled, lum_w_, lum_b_, 1, 0);
        const Tensor smooth = conv2d(lum, blur_w_, blur_b_, 1, 2);
        const Tensor dx = conv2d(smooth, gx_w_, grad_b_, 1, 1);
        const Tensor dy = conv2d(smooth, gy_w_, grad_b_, 1, 1);
        out.push_back(concat_channels({smooth, dx, dy}));
    }
    return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    return mean(abs(sub(a, b)));
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_loss");
    return mean(square(sub(a, b)));
}

Tensor perceptual_proxy_loss(const Tensor& a, const Tensor& b,
                             const ProxyFeatureExtractor& psi) {
    require_same_shape(a, b, "perceptual_proxy_loss");
    const std::vector<Tensor> fa = psi.features(a);
    const std::vector<Tensor> fb = psi.features(b);
    Tensor acc;
    for (size_t s = 0; s < fa.size(); ++s) {
        const Tensor term = mse_loss(fa[s], fb[s]);
        acc = s == 0 ? term : add(acc, term);
    }
    return mul_scalar(acc, 1.0f / static_cast<float>(fa.size()));
}

namespace {

Tensor component_mse(const Tensor& teacher, const Tensor& student) {
    Tensor t = teacher;
    if (t.shape() != student.shape()) {
        if (t.rank() != 3 || student.rank() != 3 || t.dim(0) != student.dim(0)) {
            throw ShapeError("kd_loss: incompatible component shapes " + shape_str(t.shape()) +
                             " vs " + shape_str(student.shape()));
        }
        t = resize_bilinear(t, student.dim(1), student.dim(2));
    }
    return mse_loss(t, student);
}

} // namespace

Tensor kd_loss(const model::EnhancedOutput& teacher, const model::EnhancedOutput& student) {
    const Tensor gamma_term = mse_loss(teacher.gamma, student.gamma);
    const Tensor airlight_term = component_mse(teacher.airlight, student.airlight);
    const Tensor intersection_term = component_mse(teacher.intersection, student.intersection);
    return add(add(gamma_term, airlight_term), intersection_term);
}

Tensor enhance_loss(const Tensor& prediction, const Tensor& ground_truth, const LossWeights& w,
                    const ProxyFeatureExtractor& psi) {
    require_same_shape(prediction, ground_truth, "enhance_loss");
    Tensor total = mul_scalar(l1_loss(prediction, ground_truth), w.l1);
    if (w.perceptual != 0.0f) {
        total = add(total,
                    mul_scalar(perceptual_proxy_loss(prediction, ground_truth, psi), w.perceptual));
    }
    return total;
}

Tensor total_loss_dgf(const model::EnhancedOutput& student, const Tensor& ground_truth,
                      const model::EnhancedOutput& teacher, const LossWeights& w,
                      const ProxyFeatureExtractor& psi) {
    Tensor total = enhance_loss(student.output, ground_truth, w, psi);
    if (w.kd != 0.0f) {
        total = add(total, mul_scalar(kd_loss(teacher, student), w.kd));
    }
    return total;
}

} // namespace cpga::loss
