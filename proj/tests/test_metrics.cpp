#include <doctest.h>

#include <cmath>

#include "cpga/metrics.hpp"
#include "cpga/rng.hpp"
#include "support/oracles.hpp"

using namespace cpga;

TEST_SUITE("metrics") {

TEST_CASE("psnr basics") {
    Rng rng(3);
    const Tensor img = oracle::random_tensor({3, 12, 12}, rng, 0.0f, 1.0f);
    CHECK(std::isinf(metrics::psnr(img, img)));

    // uniform offset of 0.1 -> MSE 0.01 -> 20 dB
    Tensor shifted = img.clone();
    Tensor base = Tensor::full({3, 12, 12}, 0.45f);
    Tensor off = Tensor::full({3, 12, 12}, 0.55f);
    CHECK(metrics::psnr(base, off) == doctest::Approx(20.0).epsilon(1e-9));

    CHECK_THROWS_AS(metrics::psnr(img, Tensor::zeros({3, 10, 12})), ShapeError);
}

TEST_CASE("psnr matches the direct formula on random pairs") {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        const Tensor a = oracle::random_tensor({3, 9, 11}, rng, 0.0f, 1.0f);
        const Tensor b = oracle::random_tensor({3, 9, 11}, rng, 0.0f, 1.0f);
        CHECK(metrics::psnr(a, b) == doctest::Approx(oracle::psnr_naive(a, b)).epsilon(1e-9));
        CHECK(metrics::psnr(a, b) == doctest::Approx(metrics::psnr(b, a)).epsilon(1e-12));
    }
}

TEST_CASE("psnr strictly decreases along a noise ladder") {
    Rng rng(11);
    const Tensor base = oracle::random_tensor({3, 16, 16}, rng, 0.2f, 0.8f);
    double prev = std::numeric_limits<double>::infinity();
    for (float amp : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
        Tensor noisy = base.clone();
        Rng noise_rng(99);
        for (float& v : noisy.vec()) {
            v = std::clamp(v + amp * (noise_rng.uniform() - 0.5f) * 2.0f, 0.0f, 1.0f);
        }
        const double p = metrics::psnr(base, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim basics") {
    Rng rng(13);
    const Tensor img = oracle::random_tensor({3, 16, 16}, rng, 0.0f, 1.0f);
    CHECK(metrics::ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8})),
                    ShapeError);
}

TEST_CASE("ssim of an image against its negative is low") {
    // mid-contrast checkerboard-ish pattern
    Tensor img = Tensor::zeros({3, 24, 24});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 24; ++y) {
            for (int x = 0; x < 24; ++x) {
                img.at(c, y, x) = ((x / 4 + y / 4) % 2 == 0) ? 0.7f : 0.3f;
            }
        }
    }
    Tensor negative = img.clone();
    for (float& v : negative.vec()) {
        v = 1.0f - v;
    }
    CHECK(metrics::ssim(img, negative) < 0.5);
}

TEST_CASE("ssim matches the nested-loop oracle") {
    Rng rng(17);
    for (int i = 0; i < 5; ++i) {
        const Tensor a = oracle::random_tensor({3, 14, 17}, rng, 0.0f, 1.0f);
        Tensor b = a.clone();
        Rng noise(i + 1);
        for (float& v : b.vec()) {
            v = std::clamp(v + 0.1f * (noise.uniform() - 0.5f), 0.0f, 1.0f);
        }
        CHECK(metrics::ssim(a, b) == doctest::Approx(oracle::ssim_naive(a, b)).epsilon(1e-4));
        CHECK(metrics::ssim(a, b) == doctest::Approx(metrics::ssim(b, a)).epsilon(1e-10));
    }
}

} // TEST_SUITE
