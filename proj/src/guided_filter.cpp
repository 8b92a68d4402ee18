#include "cpga/guided_filter.hpp"

#include <string>
#include <vector>

namespace cpga::gf {

Tensor fast_guided_filter(const Tensor& guide_low, const Tensor& src_low,
                          const Tensor& guide_full, const GuidedFilterParams& p) {
    if (guide_low.rank() != 3 || src_low.rank() != 3 || guide_full.rank() != 3) {
        throw ShapeError("fast_guided_filter: inputs must be [C,h,w]");
    }
    if (guide_low.dim(0) != src_low.dim(0) || guide_low.dim(0) != guide_full.dim(0)) {
        throw ShapeError("fast_guided_filter: channel mismatch guide_low=" +
                         shape_str(guide_low.shape()) + " src_low=" + shape_str(src_low.shape()) +
                         " guide_full=" + shape_str(guide_full.shape()));
    }
    if (guide_low.dim(1) != src_low.dim(1) || guide_low.dim(2) != src_low.dim(2)) {
        throw ShapeError("fast_guided_filter: low-resolution size mismatch");
    }
    if (p.radius < 1 || !(p.eps > 0.0f)) {
        throw ShapeError("fast_guided_filter: radius must be >= 1 and eps > 0");
    }

    const int channels = guide_low.dim(0);
    const int full_h = guide_full.dim(1), full_w = guide_full.dim(2);

    std::vector<Tensor> out_channels;
    out_channels.reserve(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        const Tensor guide = slice_channels(guide_low, c, c + 1);
        const Tensor guide_hi = slice_channels(guide_full, c, c + 1);
        const Tensor src = slice_channels(src_low, c, c + 1);

        const Tensor mean_guide = box_filter(guide, p.radius);
        const Tensor mean_src = box_filter(src, p.radius);
        const Tensor corr_gs = box_filter(mul(guide, src), p.radius);
        const Tensor corr_gg = box_filter(mul(guide, guide), p.radius);

        // Per-window least squares: src ~= a * guide + b over each box.
        const Tensor var_guide = sub(corr_gg, mul(mean_guide, mean_guide));
        const Tensor cov_gs = sub(corr_gs, mul(mean_guide, mean_src));
        const Tensor a = div(cov_gs, add_scalar(var_guide, p.eps));
        const Tensor b = sub(mean_src, mul(a, mean_guide));

        const Tensor a_hi = resize_bilinear(a, full_h, full_w);
        const Tensor b_hi = resize_bilinear(b, full_h, full_w);
        out_channels.push_back(add(mul(a_hi, guide_hi), b_hi));
    }
    return concat_channels(out_channels);
}

} // namespace cpga::gf
