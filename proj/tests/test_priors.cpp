#include <doctest.h>

#include <algorithm>

#include "cpga/priors.hpp"
#include "cpga/rng.hpp"
#include "support/oracles.hpp"

using namespace cpga;
using namespace cpga::priors;

namespace {

Tensor random_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    return oracle::random_tensor({3, h, w}, rng, 0.0f, 1.0f);
}

} // namespace

TEST_SUITE("priors") {

TEST_CASE("pixel-wise extrema") {
    const Tensor px = Tensor::from_vector({3, 1, 1}, {0.2f, 0.5f, 0.7f});
    CHECK(dark_channel(px).item() == doctest::Approx(0.2f));
    CHECK(bright_channel(px).item() == doctest::Approx(0.7f));

    const Tensor red = Tensor::from_vector({3, 1, 1}, {1.0f, 0.0f, 0.0f});
    CHECK(bright_channel(red).item() == 1.0f);

    const Tensor gray = Tensor::full({3, 4, 4}, 0.5f);
    const Tensor d = dark_channel(gray);
    for (int i = 0; i < d.size(); ++i) {
        CHECK(d.data()[i] == 0.5f);
    }

    CHECK_THROWS_AS(dark_channel(Tensor::zeros({2, 4, 4})), ShapeError);
}

TEST_CASE("extrema match the per-pixel loop oracle exactly") {
    const Tensor img = random_image(6, 9, 123);
    const Tensor d = dark_channel(img);
    const Tensor b = bright_channel(img);
    for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 9; ++x) {
            const float r = img.at(0, y, x), g = img.at(1, y, x), bl = img.at(2, y, x);
            CHECK(d.at(0, y, x) == std::min({r, g, bl}));
            CHECK(b.at(0, y, x) == std::max({r, g, bl}));
        }
    }
}

TEST_CASE("luminance coefficients") {
    CHECK(luminance_y(Tensor::full({3, 2, 2}, 1.0f)).at(0, 0, 0) == doctest::Approx(1.0f));
    CHECK(luminance_y(Tensor::zeros({3, 2, 2})).at(0, 0, 0) == 0.0f);
    const Tensor red = Tensor::from_vector({3, 1, 1}, {1.0f, 0.0f, 0.0f});
    CHECK(luminance_y(red).item() == doctest::Approx(0.299f));
}

TEST_CASE("patch variants") {
    const Tensor img = random_image(9, 9, 7);

    SUBCASE("radius 0 equals the pixel-wise variant") {
        CHECK(oracle::max_abs_diff(dark_channel_patch(img, {0}), dark_channel(img)) == 0.0f);
        CHECK(oracle::max_abs_diff(bright_channel_patch(img, {0}), bright_channel(img)) == 0.0f);
    }
    SUBCASE("constant image is unchanged") {
        const Tensor gray = Tensor::full({3, 5, 5}, 0.31f);
        CHECK(oracle::max_abs_diff(dark_channel_patch(gray, {2}), dark_channel(gray)) == 0.0f);
    }
    SUBCASE("matches the nested-loop window scan") {
        for (int r : {1, 2, 4}) {
            const Tensor d = dark_channel_patch(img, {r});
            const Tensor b = bright_channel_patch(img, {r});
            const Tensor d_ref =
                oracle::patch_prior_naive(img, r, [](float a, float x) { return a < x; });
            const Tensor b_ref =
                oracle::patch_prior_naive(img, r, [](float a, float x) { return a > x; });
            CHECK(oracle::max_abs_diff(d, d_ref) == 0.0f);
            CHECK(oracle::max_abs_diff(b, b_ref) == 0.0f);
        }
    }
}

TEST_CASE("prior stack") {
    SUBCASE("constant gray gives three constant planes") {
        const Tensor stack = build_prior_stack(Tensor::full({3, 4, 4}, 0.5f));
        for (int i = 0; i < stack.size(); ++i) {
            CHECK(stack.data()[i] == doctest::Approx(0.5f));
        }
    }
    SUBCASE("planes equal the standalone operations") {
        const Tensor img = random_image(5, 8, 99);
        const Tensor stack = build_prior_stack(img);
        const Tensor d = dark_channel(img);
        const Tensor b = bright_channel(img);
        const Tensor y = luminance_y(img);
        for (int i = 0; i < 40; ++i) {
            CHECK(stack.data()[i] == d.data()[i]);
            CHECK(stack.data()[40 + i] == b.data()[i]);
            CHECK(stack.data()[80 + i] == y.data()[i]);
        }
    }
}

TEST_CASE("ordering invariant dark <= Y <= bright") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const Tensor img = random_image(7, 7, seed);
        const Tensor stack = build_prior_stack(img);
        const int plane = 49;
        for (int i = 0; i < plane; ++i) {
            CHECK(stack.data()[i] <= stack.data()[2 * plane + i] + 1e-6f);
            CHECK(stack.data()[2 * plane + i] <= stack.data()[plane + i] + 1e-6f);
        }
    }
}

TEST_CASE("channel-permutation invariance") {
    const Tensor img = random_image(5, 5, 42);
    Tensor swapped = Tensor::zeros({3, 5, 5});
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) {
            swapped.at(0, y, x) = img.at(2, y, x);
            swapped.at(1, y, x) = img.at(1, y, x);
            swapped.at(2, y, x) = img.at(0, y, x);
        }
    }
    CHECK(oracle::max_abs_diff(dark_channel(img), dark_channel(swapped)) == 0.0f);
    CHECK(oracle::max_abs_diff(bright_channel(img), bright_channel(swapped)) == 0.0f);
}

TEST_CASE("monotone under uniform brightening") {
    const Tensor img = random_image(6, 6, 77);
    Tensor brighter = img.clone();
    for (float& v : brighter.vec()) {
        v = std::min(1.0f, v + 0.1f);
    }
    const Tensor s0 = build_prior_stack(img);
    const Tensor s1 = build_prior_stack(brighter);
    for (int i = 0; i < s0.size(); ++i) {
        CHECK(s1.data()[i] >= s0.data()[i] - 1e-6f);
    }
}

} // TEST_SUITE
