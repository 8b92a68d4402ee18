#include "cpga/model.hpp"

#include <algorithm>
#include <cmath>

#include "cpga/priors.hpp"
#include "cpga/rng.hpp"

namespace cpga::model {

bool CpgaConfig::operator==(const CpgaConfig& o) const {
    return base_channels == o.base_channels && gamma_channels == o.gamma_channels &&
           fusion_channels == o.fusion_channels && attention_hidden == o.attention_hidden &&
           use_dgf == o.use_dgf && dgf_downsample == o.dgf_downsample &&
           dgf_filter.radius == o.dgf_filter.radius && dgf_filter.eps == o.dgf_filter.eps &&
           t_min == o.t_min && gamma_lo == o.gamma_lo && gamma_hi == o.gamma_hi &&
           t_input == o.t_input && a_net == o.a_net && g_net == o.g_net && fusion == o.fusion &&
           use_t == o.use_t && use_gamma == o.use_gamma;
}

const char* to_string(TInput v) { return v == TInput::Priors ? "priors" : "rgb"; }
const char* to_string(ANet v) { return v == ANet::ResBlock ? "resblock" : "conv"; }
const char* to_string(GNet v) { return v == GNet::ResCbam ? "rescbam" : "resblock"; }
const char* to_string(Fusion v) { return v == Fusion::Iaaf ? "iaaf" : "none"; }

TInput t_input_from_string(const std::string& s) {
    if (s == "priors") return TInput::Priors;
    if (s == "rgb") return TInput::Rgb;
    throw ShapeError("unknown t_input: " + s);
}
ANet a_net_from_string(const std::string& s) {
    if (s == "resblock") return ANet::ResBlock;
    if (s == "conv") return ANet::Conv;
    throw ShapeError("unknown a_net: " + s);
}
GNet g_net_from_string(const std::string& s) {
    if (s == "rescbam") return GNet::ResCbam;
    if (s == "resblock") return GNet::ResBlock;
    throw ShapeError("unknown g_net: " + s);
}
Fusion fusion_from_string(const std::string& s) {
    if (s == "iaaf") return Fusion::Iaaf;
    if (s == "none") return Fusion::None;
    throw ShapeError("unknown fusion: " + s);
}

CpgaConfig ablation_config(char row, int base_channels) {
    CpgaConfig c;
    c.base_channels = base_channels;
    switch (row) {
    case 'a': c.use_t = false; c.a_net = ANet::Conv; c.use_gamma = false; break;
    case 'b': c.use_t = false; c.a_net = ANet::ResBlock; c.use_gamma = false; break;
    case 'c': c.t_input = TInput::Rgb; c.a_net = ANet::Conv; c.use_gamma = false; break;
    case 'd': c.t_input = TInput::Priors; c.a_net = ANet::Conv; c.use_gamma = false; break;
    case 'e': c.t_input = TInput::Rgb; c.a_net = ANet::ResBlock; c.use_gamma = false; break;
    case 'f': c.t_input = TInput::Priors; c.a_net = ANet::ResBlock; c.use_gamma = false; break;
    case 'g':
        c.t_input = TInput::Priors;
        c.g_net = GNet::ResBlock;
        c.fusion = Fusion::None;
        break;
    case 'h':
        c.t_input = TInput::Rgb;
        c.g_net = GNet::ResBlock;
        c.fusion = Fusion::Iaaf;
        break;
    case 'i':
        c.t_input = TInput::Priors;
        c.g_net = GNet::ResBlock;
        c.fusion = Fusion::Iaaf;
        break;
    case 'j':
        c.t_input = TInput::Priors;
        c.g_net = GNet::ResCbam;
        c.fusion = Fusion::Iaaf;
        break;
    default: throw ShapeError(std::string("unknown ablation row '") + row + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Attention blocks
// ---------------------------------------------------------------------------

Tensor ChannelAttention::operator()(const Tensor& f) const {
    const Tensor pooled_avg = global_avg_pool(f);
    const Tensor pooled_max = global_max_pool(f);
    const Tensor h1 = relu(linear(pooled_avg, w1, b1));
    const Tensor h2 = relu(linear(pooled_max, w1, b1));
    const Tensor scores = add(linear(h1, w2, b2), linear(h2, w2, b2));
    const Tensor weights = sigmoid(scores);
    return mul(f, reshape(weights, {f.dim(0), 1, 1}));
}

Tensor SpatialAttention::operator()(const Tensor& f) const {
    const Tensor pooled = concat_channels({channel_mean(f), channel_max(f)});
    const Tensor weights = sigmoid(conv(pooled));
    return mul(f, weights);
}

Tensor ResCbamLayer::operator()(const Tensor& x) const {
    Tensor body = conv2(relu(conv1(x)));
    body = sa(ca(body));
    return add(x, body);
}

// ---------------------------------------------------------------------------
// CpgaNet
// ---------------------------------------------------------------------------

namespace {

Tensor kaiming_uniform(Shape shape, int fan_in, uint64_t seed) {
    Rng rng(seed);
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    const int n = shape_size(shape);
    std::vector<float> v(static_cast<size_t>(n));
    for (float& x : v) {
        x = rng.uniform(-bound, bound);
    }
    Tensor t = Tensor::from_vector(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

void validate_image(const Tensor& img, const char* op) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw ShapeError(std::string(op) + ": expected [3,H,W], got " + shape_str(img.shape()));
    }
    if (img.dim(1) < 8 || img.dim(2) < 8) {
        throw ShapeError(std::string(op) + ": image must be at least 8x8, got " +
                         shape_str(img.shape()));
    }
    for (float v : img.vec()) {
        if (v < -1e-4f || v > 1.0f + 1e-4f) {
            throw ShapeError(std::string(op) + ": input values must lie in [0,1]");
        }
    }
}

} // namespace

void CpgaNet::register_conv(const std::string& name, Conv2dLayer& layer, int co, int ci, int k,
                            uint64_t seed) {
    layer.weight = kaiming_uniform({co, ci, k, k}, ci * k * k, Rng::derive(seed, params_.size()));
    layer.bias = Tensor::zeros({co}, true);
    layer.padding = k / 2;
    params_.push_back({name + ".weight", layer.weight});
    params_.push_back({name + ".bias", layer.bias});
}

void CpgaNet::register_linear(const std::string& name, Tensor& w, Tensor& b, int out, int in,
                              uint64_t seed) {
    w = kaiming_uniform({out, in}, in, Rng::derive(seed, params_.size()));
    b = Tensor::zeros({out}, true);
    params_.push_back({name + ".weight", w});
    params_.push_back({name + ".bias", b});
}

CpgaNet::CpgaNet(CpgaConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.base_channels < 1 || cfg.gamma_channels < 1 || cfg.fusion_channels < 1 ||
        cfg.attention_hidden < 1) {
        throw ShapeError("CpgaNet: channel counts must be >= 1");
    }
    if (!(cfg.t_min > 0.0f && cfg.t_min < 1.0f)) {
        throw ShapeError("CpgaNet: t_min must lie in (0,1)");
    }
    if (!(cfg.gamma_lo > 0.0f && cfg.gamma_lo < cfg.gamma_hi)) {
        throw ShapeError("CpgaNet: gamma bounds must satisfy 0 < lo < hi");
    }
    const int c = cfg.base_channels;
    const int cg = cfg.gamma_channels;
    const int cf = cfg.fusion_channels;

    if (cfg.use_t) {
        register_conv("t_branch.stem", t_stem_, c, 3, 3, seed);
        register_conv("t_branch.res.conv1", t_res_.conv1, c, c, 3, seed);
        register_conv("t_branch.res.conv2", t_res_.conv2, c, c, 3, seed);
        register_conv("t_branch.head", t_head_, 1, c, 3, seed);
    }

    register_conv("a_branch.stem", a_stem_, c, 3, 3, seed);
    if (cfg.a_net == ANet::ResBlock) {
        register_conv("a_branch.res1.conv1", a_res1_.conv1, c, c, 3, seed);
        register_conv("a_branch.res1.conv2", a_res1_.conv2, c, c, 3, seed);
        register_conv("a_branch.res2.conv1", a_res2_.conv1, c, c, 3, seed);
        register_conv("a_branch.res2.conv2", a_res2_.conv2, c, c, 3, seed);
    } else {
        register_conv("a_branch.conv1", a_conv1_, c, c, 3, seed);
        register_conv("a_branch.conv2", a_conv2_, c, c, 3, seed);
    }
    register_conv("a_branch.head", a_head_, 3, c, 3, seed);

    if (cfg.use_gamma) {
        register_conv("gamma_branch.stem", g_stem_, cg, 3, 3, seed);
        if (cfg.g_net == GNet::ResCbam) {
            register_conv("gamma_branch.block.conv1", g_block_.conv1, cg, cg, 3, seed);
            register_conv("gamma_branch.block.conv2", g_block_.conv2, cg, cg, 3, seed);
            register_linear("gamma_branch.block.ca.fc1", g_block_.ca.w1, g_block_.ca.b1,
                            cfg.attention_hidden, cg, seed);
            register_linear("gamma_branch.block.ca.fc2", g_block_.ca.w2, g_block_.ca.b2, cg,
                            cfg.attention_hidden, seed);
            register_conv("gamma_branch.block.sa.conv", g_block_.sa.conv, 1, 2, 3, seed);
        } else {
            register_conv("gamma_branch.block.conv1", g_resblock_.conv1, cg, cg, 3, seed);
            register_conv("gamma_branch.block.conv2", g_resblock_.conv2, cg, cg, 3, seed);
        }
        register_linear("gamma_branch.head", g_head_w_, g_head_b_, 1, cg, seed);

        if (cfg.fusion == Fusion::Iaaf) {
            register_conv("fusion.conv1", f_conv1_, cf, 6, 3, seed);
            register_conv("fusion.conv2", f_conv2_, 3, cf, 3, seed);
        }
    }
}

std::vector<Tensor> CpgaNet::params() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        out.push_back(t);
    }
    return out;
}

Tensor CpgaNet::param(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) {
            return t;
        }
    }
    throw ShapeError("CpgaNet: no parameter named " + name);
}

void CpgaNet::zero_grads() {
    for (auto& [name, t] : params_) {
        t.zero_grad();
    }
}

void CpgaNet::set_trainable(bool trainable) {
    for (auto& [name, t] : params_) {
        t.set_requires_grad(trainable);
    }
}

Tensor CpgaNet::estimate_transmission(const Tensor& input) const {
    if (!cfg_.use_t) {
        throw ShapeError("estimate_transmission: transmission branch disabled in this config");
    }
    if (input.rank() != 3 || input.dim(0) != 3) {
        throw ShapeError("estimate_transmission: expected a 3-plane input, got " +
                         shape_str(input.shape()));
    }
    const Tensor logits = t_head_(t_res_(t_stem_(input)));
    const Tensor s = sigmoid(logits);
    return add_scalar(mul_scalar(s, 1.0f - cfg_.t_min), cfg_.t_min);
}

Tensor CpgaNet::estimate_airlight(const Tensor& img) const {
    Tensor f = a_stem_(img);
    if (cfg_.a_net == ANet::ResBlock) {
        f = a_res2_(a_res1_(f));
    } else {
        f = relu(a_conv2_(relu(a_conv1_(f))));
    }
    return sigmoid(a_head_(f));
}

Tensor CpgaNet::gamma_features(const Tensor& img) const {
    if (!cfg_.use_gamma) {
        throw ShapeError("gamma_features: global branch disabled in this config");
    }
    const Tensor f = g_stem_(img);
    return cfg_.g_net == GNet::ResCbam ? g_block_(f) : g_resblock_(f);
}

Tensor CpgaNet::gamma_head(const Tensor& features) const {
    const Tensor pooled = global_avg_pool(features);
    const Tensor z = linear(pooled, g_head_w_, g_head_b_);
    const Tensor g = add_scalar(softplus(z), cfg_.gamma_lo);
    return clamp(g, cfg_.gamma_lo, cfg_.gamma_hi);
}

Tensor CpgaNet::estimate_gamma(const Tensor& img) const {
    return gamma_head(gamma_features(img));
}

std::pair<Tensor, Tensor> CpgaNet::fuse(const Tensor& local, const Tensor& gamma_corrected) const {
    if (local.shape() != gamma_corrected.shape()) {
        throw ShapeError("fuse: shape mismatch " + shape_str(local.shape()) + " vs " +
                         shape_str(gamma_corrected.shape()));
    }
    const Tensor stacked = concat_channels({local, gamma_corrected});
    const Tensor intersection = f_conv2_(relu(f_conv1_(stacked)));
    const Tensor fused = sub(add(local, gamma_corrected), intersection);
    return {fused, intersection};
}

// ---------------------------------------------------------------------------
// Free-standing model ops
// ---------------------------------------------------------------------------

Tensor reconstruct(const Tensor& low, const Tensor& transmission, const Tensor& airlight,
                   float t_min) {
    if (low.rank() != 3 || low.dim(0) != 3) {
        throw ShapeError("reconstruct: low must be [3,H,W]");
    }
    if (airlight.shape() != low.shape()) {
        throw ShapeError("reconstruct: airlight shape " + shape_str(airlight.shape()) +
                         " does not match image " + shape_str(low.shape()));
    }
    if (transmission.rank() != 3 || transmission.dim(0) != 1 ||
        transmission.dim(1) != low.dim(1) || transmission.dim(2) != low.dim(2)) {
        throw ShapeError("reconstruct: transmission must be [1,H,W] matching the image");
    }
    for (float v : transmission.vec()) {
        if (v < t_min - 1e-6f) {
            throw ShapeError("reconstruct: transmission below t_min=" + std::to_string(t_min));
        }
    }
    return add(div(sub(low, airlight), transmission), airlight);
}

Tensor gamma_apply(const Tensor& r, const Tensor& gamma) {
    if (gamma.size() != 1) {
        throw ShapeError("gamma_apply: gamma must be scalar");
    }
    if (!(gamma.item() > 0.0f)) {
        throw ShapeError("gamma_apply: gamma must be > 0, got " + std::to_string(gamma.item()));
    }
    return pow(clamp(r, kEpsSafe, 1.0f), gamma);
}

EnhancedOutput forward(const CpgaNet& net, const Tensor& img) {
    validate_image(img, "forward");
    const CpgaConfig& cfg = net.config();
    EnhancedOutput out;

    out.airlight = net.estimate_airlight(img);
    if (cfg.use_t) {
        const Tensor t_in =
            cfg.t_input == TInput::Priors ? priors::build_prior_stack(img) : img;
        out.transmission = net.estimate_transmission(t_in);
        out.local = reconstruct(img, out.transmission, out.airlight, cfg.t_min);
    } else {
        // Airlight branch acts as a direct enhancer.
        out.transmission = Tensor::full({1, img.dim(1), img.dim(2)}, 1.0f);
        out.local = out.airlight;
    }

    if (cfg.use_gamma) {
        out.gamma = net.estimate_gamma(img);
        out.gamma_corrected = gamma_apply(out.local, out.gamma);
        if (cfg.fusion == Fusion::Iaaf) {
            auto [fused, intersection] = net.fuse(out.local, out.gamma_corrected);
            out.output_preclamp = fused;
            out.intersection = intersection;
        } else {
            // Without fusion the result is the gamma-corrected map; keeping
            // intersection = local preserves the output algebra.
            out.intersection = out.local;
            out.output_preclamp = sub(add(out.local, out.gamma_corrected), out.intersection);
        }
    } else {
        out.gamma = Tensor::scalar(1.0f);
        out.gamma_corrected = out.local;
        out.intersection = out.local;
        out.output_preclamp = sub(add(out.local, out.gamma_corrected), out.intersection);
    }
    out.output = clamp(out.output_preclamp, 0.0f, 1.0f);
    return out;
}

EnhancedOutput forward_dgf(const CpgaNet& net, const Tensor& img) {
    const CpgaConfig& cfg = net.config();
    if (!cfg.use_dgf) {
        throw ShapeError("forward_dgf: config has use_dgf = false");
    }
    if (cfg.dgf_downsample < 1) {
        throw ShapeError("forward_dgf: dgf_downsample must be >= 1");
    }
    validate_image(img, "forward_dgf");
    const int h = img.dim(1), w = img.dim(2);
    const int h2 = std::max(1, h / cfg.dgf_downsample);
    const int w2 = std::max(1, w / cfg.dgf_downsample);
    if (h2 < 8 || w2 < 8) {
        throw ShapeError("forward_dgf: reduced resolution below 8x8; lower dgf_downsample");
    }

    const Tensor img_low = resize_bilinear(img, h2, w2);
    EnhancedOutput out = forward(net, img_low);
    const Tensor lifted = gf::fast_guided_filter(img_low, out.output, img, cfg.dgf_filter);
    out.output = clamp(lifted, 0.0f, 1.0f);
    return out;
}

long param_count(const CpgaNet& net) {
    long n = 0;
    for (const auto& [name, t] : net.named_params()) {
        n += t.size();
    }
    return n;
}

// ---------------------------------------------------------------------------
// FLOPs
// ---------------------------------------------------------------------------

namespace {

constexpr long long kTranscendental = 8; // exp/log/pow/sigmoid per element

void add_conv(FlopsEstimate& e, long long ci, long long co, long long k, long long h,
              long long w) {
    e.conv += 2 * k * k * ci * co * h * w;
    e.other += co * h * w; // bias
}

// One enhancement pass at (h, w), excluding any DGF resizing/lifting.
FlopsEstimate base_pass(const CpgaConfig& cfg, long long h, long long w) {
    FlopsEstimate e;
    const long long c = cfg.base_channels;
    const long long cg = cfg.gamma_channels;
    const long long cf = cfg.fusion_channels;
    const long long hw = h * w;

    if (cfg.use_t) {
        if (cfg.t_input == TInput::Priors) {
            e.other += 9 * hw; // channel extrema + luminance
        }
        add_conv(e, 3, c, 3, h, w);
        add_conv(e, c, c, 3, h, w);
        add_conv(e, c, c, 3, h, w);
        e.other += 2 * c * hw; // residual add + relu
        add_conv(e, c, 1, 3, h, w);
        e.other += kTranscendental * hw + 2 * hw; // sigmoid + affine map
        e.other += 9 * hw;                        // reconstruction arithmetic
    }

    add_conv(e, 3, c, 3, h, w);
    add_conv(e, c, c, 3, h, w);
    add_conv(e, c, c, 3, h, w);
    if (cfg.a_net == ANet::ResBlock) {
        add_conv(e, c, c, 3, h, w);
        add_conv(e, c, c, 3, h, w);
        e.other += 4 * c * hw; // two residual adds + relus
    } else {
        e.other += 2 * c * hw; // relus
    }
    add_conv(e, c, 3, 3, h, w);
    e.other += kTranscendental * 3 * hw; // sigmoid

    if (cfg.use_gamma) {
        add_conv(e, 3, cg, 3, h, w);
        add_conv(e, cg, cg, 3, h, w);
        add_conv(e, cg, cg, 3, h, w);
        e.other += 2 * cg * hw; // relu + skip add
        if (cfg.g_net == GNet::ResCbam) {
            e.other += 2 * cg * hw;                                     // avg + max pool
            e.other += 8 * cg * cfg.attention_hidden + 2 * cg * kTranscendental; // MLP + sigmoid
            e.other += cg * hw;                                         // channel scaling
            e.other += 2 * cg * hw;                                     // per-pixel mean/max
            add_conv(e, 2, 1, 3, h, w);
            e.other += kTranscendental * hw + cg * hw; // sigmoid + spatial scaling
        }
        e.other += cg * hw + 2 * cg + kTranscendental; // head pool + linear + softplus
        e.other += 3 * hw + kTranscendental * 3 * hw;  // clamp + pow

        if (cfg.fusion == Fusion::Iaaf) {
            add_conv(e, 6, cf, 3, h, w);
            e.other += cf * hw; // relu
            add_conv(e, cf, 3, 3, h, w);
        }
    }
    e.other += 3 * 3 * hw; // output algebra + boundary clamp
    return e;
}

} // namespace

FlopsEstimate flops_estimate(const CpgaNet& net, int h, int w) {
    const CpgaConfig& cfg = net.config();
    if (!cfg.use_dgf) {
        return base_pass(cfg, h, w);
    }
    const long long h2 = std::max(1, h / cfg.dgf_downsample);
    const long long w2 = std::max(1, w / cfg.dgf_downsample);
    FlopsEstimate e = base_pass(cfg, h2, w2);
    const long long hw = static_cast<long long>(h) * w;
    const long long lw = h2 * w2;
    e.other += 8 * 3 * lw;       // image downsample
    e.other += 3 * (4 * 6 * lw); // four box filters per channel
    e.other += 3 * 12 * lw;      // coefficient arithmetic
    e.other += 2 * 3 * 8 * hw;   // coefficient upsampling
    e.other += 3 * 3 * hw;       // affine application + clamp
    return e;
}

} // namespace cpga::model
