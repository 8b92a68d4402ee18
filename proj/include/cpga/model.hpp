#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpga/guided_filter.hpp"
#include "cpga/tensor.hpp"

namespace cpga::model {

enum class TInput { Priors, Rgb };
enum class ANet { ResBlock, Conv };
enum class GNet { ResCbam, ResBlock };
enum class Fusion { Iaaf, None };

// Architecture switches. base_channels scales the local (transmission +
// airlight) branches only; the global branch and fusion module keep fixed
// widths so the reduced variant stays expressive.
struct CpgaConfig {
    int base_channels = 16;
    int gamma_channels = 16;
    int fusion_channels = 32;
    int attention_hidden = 8;

    bool use_dgf = false;
    int dgf_downsample = 2;
    gf::GuidedFilterParams dgf_filter;

    float t_min = 0.05f;
    float gamma_lo = 0.1f;
    float gamma_hi = 5.0f;

    TInput t_input = TInput::Priors;
    ANet a_net = ANet::ResBlock;
    GNet g_net = GNet::ResCbam;
    Fusion fusion = Fusion::Iaaf;
    bool use_t = true;     // off: the airlight branch output is the result
    bool use_gamma = true; // off: no global branch, no gamma correction

    bool operator==(const CpgaConfig& o) const;
};

const char* to_string(TInput v);
const char* to_string(ANet v);
const char* to_string(GNet v);
const char* to_string(Fusion v);
TInput t_input_from_string(const std::string& s);
ANet a_net_from_string(const std::string& s);
GNet g_net_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);

// The architecture-comparison presets 'a'..'j' used by the training
// comparison suite (combinations of input type, branch depth, global branch
// and fusion).
CpgaConfig ablation_config(char row, int base_channels = 16);

struct Conv2dLayer {
    Tensor weight; // [Co,Ci,k,k]
    Tensor bias;   // [Co]
    int stride = 1;
    int padding = 1;

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct ResBlockLayer {
    Conv2dLayer conv1, conv2;

    Tensor operator()(const Tensor& x) const { return add(x, conv2(relu(conv1(x)))); }
};

struct ChannelAttention {
    Tensor w1, b1; // [hidden,C],[hidden]
    Tensor w2, b2; // [C,hidden],[C]

    Tensor operator()(const Tensor& f) const;
};

struct SpatialAttention {
    Conv2dLayer conv; // 3x3, 2 -> 1

    Tensor operator()(const Tensor& f) const;
};

// Residual block whose body output passes channel then spatial attention
// before the skip connection.
struct ResCbamLayer {
    Conv2dLayer conv1, conv2;
    ChannelAttention ca;
    SpatialAttention sa;

    Tensor operator()(const Tensor& x) const;
};

// Every component of one enhancement pass. The final output is an algebraic
// combination of the others, which is what makes the model inspectable and
// distillable.
struct EnhancedOutput {
    Tensor output;          // final result, clamped to [0,1]
    Tensor output_preclamp; // local + gamma_corrected - intersection
    Tensor local;           // scene reconstruction from the local branch
    Tensor gamma_corrected; // local raised to the estimated gamma
    Tensor transmission;    // [1,h,w] in [t_min,1]; low resolution under DGF
    Tensor airlight;        // [3,h,w] in [0,1]
    Tensor intersection;    // learned overlap of local and gamma_corrected
    Tensor gamma;           // scalar tensor in [gamma_lo, gamma_hi]

    float gamma_value() const { return gamma.item(); }
};

class CpgaNet {
public:
    CpgaNet(CpgaConfig cfg, uint64_t seed);

    const CpgaConfig& config() const { return cfg_; }

    // Stable registration order; names are the checkpoint keys.
    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }
    std::vector<Tensor> params() const;
    Tensor param(const std::string& name) const;
    void zero_grads();
    void set_trainable(bool trainable);

    Tensor estimate_transmission(const Tensor& input) const;
    Tensor estimate_airlight(const Tensor& img) const;
    Tensor estimate_gamma(const Tensor& img) const;

    // Split of the global branch for spatial-permutation checks: features
    // before pooling, and the pooled head that yields gamma.
    Tensor gamma_features(const Tensor& img) const;
    Tensor gamma_head(const Tensor& features) const;

    // Returns {fused (pre-clamp), intersection}.
    std::pair<Tensor, Tensor> fuse(const Tensor& local, const Tensor& gamma_corrected) const;

private:
    void register_conv(const std::string& name, Conv2dLayer& layer, int co, int ci, int k,
                       uint64_t seed);
    void register_linear(const std::string& name, Tensor& w, Tensor& b, int out, int in,
                         uint64_t seed);

    CpgaConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;

    // transmission branch
    Conv2dLayer t_stem_;
    ResBlockLayer t_res_;
    Conv2dLayer t_head_;
    // airlight branch
    Conv2dLayer a_stem_;
    ResBlockLayer a_res1_, a_res2_; // ResBlock variant
    Conv2dLayer a_conv1_, a_conv2_; // plain-conv variant
    Conv2dLayer a_head_;
    // global branch
    Conv2dLayer g_stem_;
    ResCbamLayer g_block_;    // ResCbam variant
    ResBlockLayer g_resblock_; // plain ResBlock variant
    Tensor g_head_w_, g_head_b_;
    // fusion
    Conv2dLayer f_conv1_, f_conv2_;
};

// Scene radiance from the inverted scattering relation:
// R = (low - airlight) / t + airlight, t broadcast across channels.
// Rejects transmission below t_min. The result is intentionally unclamped.
Tensor reconstruct(const Tensor& low, const Tensor& transmission, const Tensor& airlight,
                   float t_min);

// s = r^gamma with r clamped to [kEpsSafe, 1] first; differentiable in both.
Tensor gamma_apply(const Tensor& r, const Tensor& gamma);

EnhancedOutput forward(const CpgaNet& net, const Tensor& img);
EnhancedOutput forward_dgf(const CpgaNet& net, const Tensor& img);

long param_count(const CpgaNet& net);

struct FlopsEstimate {
    long long conv = 0;  // 2*k^2*Cin*Cout*H'*W' terms
    long long other = 0; // bias, elementwise, pooling, resize, filtering
    long long total() const { return conv + other; }
};

// Analytic cost of one forward pass at the given resolution (the DGF path is
// costed at its reduced resolution plus the lifting filter).
FlopsEstimate flops_estimate(const CpgaNet& net, int h, int w);

} // namespace cpga::model
