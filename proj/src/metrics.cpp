#include "cpga/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace cpga::metrics {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

std::vector<double> luminance(const Tensor& img) {
    const int plane = img.dim(1) * img.dim(2);
    std::vector<double> y(static_cast<size_t>(plane));
    if (img.dim(0) == 3) {
        const float* r = img.data();
        const float* g = r + plane;
        const float* b = g + plane;
        for (int i = 0; i < plane; ++i) {
            y[static_cast<size_t>(i)] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        }
    } else {
        const float* p = img.data();
        for (int i = 0; i < plane; ++i) {
            y[static_cast<size_t>(i)] = static_cast<double>(p[i]);
        }
    }
    return y;
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

const std::vector<double>& gaussian_window() {
    static const std::vector<double> window = [] {
        std::vector<double> w(kWindow * kWindow);
        double total = 0.0;
        for (int y = 0; y < kWindow; ++y) {
            for (int x = 0; x < kWindow; ++x) {
                const double dy = y - kWindow / 2;
                const double dx = x - kWindow / 2;
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
                w[static_cast<size_t>(y * kWindow + x)] = v;
                total += v;
            }
        }
        for (double& v : w) {
            v /= total;
        }
        return w;
    }();
    return window;
}

} // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    const float* pa = a.data();
    const float* pb = b.data();
    double mse = 0.0;
    const int n = a.size();
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3) {
        throw ShapeError("ssim: expected [C,H,W]");
    }
    const int h = a.dim(1), w = a.dim(2);
    if (h < kWindow || w < kWindow) {
        throw ShapeError("ssim: image smaller than the 11x11 window");
    }
    const std::vector<double> ya = luminance(a);
    const std::vector<double> yb = luminance(b);
    const std::vector<double>& win = gaussian_window();

    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0.0;
    long count = 0;
    for (int y = 0; y + kWindow <= h; ++y) {
        for (int x = 0; x + kWindow <= w; ++x) {
            double mu_a = 0.0, mu_b = 0.0;
            for (int wy = 0; wy < kWindow; ++wy) {
                const size_t row = static_cast<size_t>(y + wy) * w + x;
                const double* wrow = win.data() + static_cast<size_t>(wy) * kWindow;
                for (int wx = 0; wx < kWindow; ++wx) {
                    mu_a += wrow[wx] * ya[row + static_cast<size_t>(wx)];
                    mu_b += wrow[wx] * yb[row + static_cast<size_t>(wx)];
                }
            }
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (int wy = 0; wy < kWindow; ++wy) {
                const size_t row = static_cast<size_t>(y + wy) * w + x;
                const double* wrow = win.data() + static_cast<size_t>(wy) * kWindow;
                for (int wx = 0; wx < kWindow; ++wx) {
                    const double da = ya[row + static_cast<size_t>(wx)] - mu_a;
                    const double db = yb[row + static_cast<size_t>(wx)] - mu_b;
                    var_a += wrow[wx] * da * da;
                    var_b += wrow[wx] * db * db;
                    cov += wrow[wx] * da * db;
                }
            }
            const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace cpga::metrics
