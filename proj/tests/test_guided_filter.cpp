#include <doctest.h>

#include "cpga/guided_filter.hpp"
#include "cpga/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace cpga;
using namespace cpga::gf;

TEST_SUITE("guided_filter") {

TEST_CASE("self-guidance with small eps reproduces the full-resolution guide") {
    Rng rng(5);
    const Tensor guide_full = oracle::random_tensor({3, 16, 16}, rng, 0.0f, 1.0f);
    const Tensor guide_low = resize_bilinear(guide_full, 8, 8);
    const Tensor out = fast_guided_filter(guide_low, guide_low, guide_full, {1, 1e-8f});
    CHECK(oracle::max_abs_diff(out, guide_full) < 1e-3f);
}

TEST_CASE("very large eps flattens the output toward the local source mean") {
    Rng rng(9);
    // constant guide: a ~ 0, b ~ local mean of src
    const Tensor guide_low = Tensor::full({1, 10, 10}, 0.5f);
    const Tensor guide_full = Tensor::full({1, 20, 20}, 0.5f);
    const Tensor src = oracle::random_tensor({1, 10, 10}, rng, 0.4f, 0.6f);
    const Tensor out = fast_guided_filter(guide_low, src, guide_full, {3, 1e3f});
    const Tensor mean_src = resize_bilinear(box_filter(src, 3), 20, 20);
    CHECK(oracle::max_abs_diff(out, mean_src) < 1e-3f);
}

TEST_CASE("matches the per-window least-squares oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor guide_full = oracle::random_tensor({3, 24, 24}, rng, 0.0f, 1.0f);
        const Tensor guide_low = resize_bilinear(guide_full, 12, 12);
        const Tensor src = oracle::random_tensor({3, 12, 12}, rng, 0.0f, 1.0f);
        const Tensor fast = fast_guided_filter(guide_low, src, guide_full, {2, 1e-2f});
        const Tensor slow = oracle::guided_filter_naive(guide_low, src, guide_full, 2, 1e-2);
        CHECK(oracle::max_abs_diff(fast, slow) < 1e-5f);
    }
}

TEST_CASE("constant invariance") {
    const Tensor guide_low = Tensor::full({3, 8, 8}, 0.3f);
    const Tensor guide_full = Tensor::full({3, 16, 16}, 0.3f);
    const Tensor src = Tensor::full({3, 8, 8}, 0.62f);
    const Tensor out = fast_guided_filter(guide_low, src, guide_full, {1, 1e-2f});
    for (int i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(0.62f).epsilon(1e-5));
    }
}

TEST_CASE("linear in the source") {
    Rng rng(21);
    const Tensor guide_full = oracle::random_tensor({3, 18, 18}, rng, 0.0f, 1.0f);
    const Tensor guide_low = resize_bilinear(guide_full, 9, 9);
    const Tensor s1 = oracle::random_tensor({3, 9, 9}, rng, 0.0f, 1.0f);
    const Tensor s2 = oracle::random_tensor({3, 9, 9}, rng, 0.0f, 1.0f);
    const float alpha = 0.6f, beta = 0.4f;
    const GuidedFilterParams p{2, 1e-2f};

    const Tensor mixed = add(mul_scalar(s1, alpha), mul_scalar(s2, beta));
    const Tensor lhs = fast_guided_filter(guide_low, mixed, guide_full, p);
    const Tensor rhs = add(mul_scalar(fast_guided_filter(guide_low, s1, guide_full, p), alpha),
                           mul_scalar(fast_guided_filter(guide_low, s2, guide_full, p), beta));
    CHECK(oracle::max_abs_diff(lhs, rhs) < 1e-5f);
}

TEST_CASE("gradients flow to the low-resolution source") {
    Rng rng(33);
    const Tensor guide_full = oracle::random_tensor({2, 12, 12}, rng, 0.0f, 1.0f);
    const Tensor guide_low = resize_bilinear(guide_full, 6, 6);
    Tensor src = oracle::random_tensor({2, 6, 6}, rng, 0.2f, 0.8f);
    src.set_requires_grad(true);
    auto loss = [&] {
        return mean(square(fast_guided_filter(guide_low, src, guide_full, {1, 1e-2f})));
    };
    const auto res = gradcheck::check(loss, {src});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("channel mismatch is rejected") {
    const Tensor g3 = Tensor::full({3, 8, 8}, 0.5f);
    const Tensor g1 = Tensor::full({1, 8, 8}, 0.5f);
    const Tensor full = Tensor::full({3, 16, 16}, 0.5f);
    CHECK_THROWS_AS(fast_guided_filter(g3, g1, full, {1, 1e-2f}), ShapeError);
    CHECK_THROWS_AS(fast_guided_filter(g3, g3, full, {0, 1e-2f}), ShapeError);
}

} // TEST_SUITE
