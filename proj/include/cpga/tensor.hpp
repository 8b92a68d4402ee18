#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cpga/common.hpp"

namespace cpga {

using Shape = std::vector<int>;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // non-empty iff requires_grad
    bool requires_grad = false;
    bool leaf = false; // user-created parameter vs. op output
};

} // namespace detail

// Dense float32 tensor with value semantics over a shared buffer.
// Ops never mutate their inputs; the optimizer step is the only in-place
// writer. Gradients accumulate into `grad` during Tape::backward.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int size() const { return static_cast<int>(node_->data.size()); }

    float* data() { return node_->data.data(); }
    const float* data() const { return node_->data.data(); }
    std::vector<float>& vec() { return node_->data; }
    const std::vector<float>& vec() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v);
    float* grad() { return node_->grad.data(); }
    const float* grad() const { return node_->grad.data(); }
    std::vector<float>& grad_vec() { return node_->grad; }
    const std::vector<float>& grad_vec() const { return node_->grad; }
    void zero_grad();

    // Value of a single-element tensor.
    float item() const;

    // CHW accessors for 3-D tensors.
    float at(int c, int y, int x) const;
    float& at(int c, int y, int x);

    // Deep copy of values (never shares the buffer; grad state not copied).
    Tensor clone() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    bool is_leaf() const { return node_->leaf; }

    // Internal: output node of an op (non-leaf, grad buffer when needed).
    static Tensor op_output(Shape shape, bool requires_grad);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

std::string shape_str(const Shape& s);
int shape_size(const Shape& s);

// Throws NumericError if any value is non-finite. `what` names the op.
void check_finite(const Tensor& t, const char* what);

// Records the backward closures of executed ops, in execution order.
// Running them in reverse visits every node of the compute DAG once.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and propagates to all requires_grad ancestors.
    // Leaf gradients accumulate across repeated calls (callers reset between
    // steps); intermediate gradients are transient and cleared per pass.
    void backward(const Tensor& loss);

    void clear() { entries_.clear(); }
    size_t size() const { return entries_.size(); }
    void record(Tensor output, std::function<void()> fn) {
        entries_.push_back({std::move(output), std::move(fn)});
    }

    static Tape* active();

    // RAII activation: ops executed in scope record onto this tape.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

private:
    struct Entry {
        Tensor output;
        std::function<void()> fn;
    };
    std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Binary ops broadcast `b` when it is a scalar, a
// per-pixel plane [1,H,W] against [C,H,W], or a per-channel column [C,1,1].
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b); // denominator clamped to >= kEpsSafe

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);   // subgradient 0 at 0
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // argument clamped to >= kEpsSafe
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

// a^p elementwise; base clamped to >= kEpsSafe. The exponent may be a scalar
// tensor, in which case gradients flow to it as well.
Tensor pow(const Tensor& a, float p);
Tensor pow(const Tensor& a, const Tensor& p);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

// input [C_in,H,W], weight [C_out,C_in,k,k], bias [C_out].
// Output height (H + 2*padding - k)/stride + 1; non-exact divisions are
// rejected. Accumulation is in double.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

Tensor global_avg_pool(const Tensor& x); // [C,H,W] -> [C]
Tensor global_max_pool(const Tensor& x); // [C,H,W] -> [C], subgradient to first argmax

Tensor channel_mean(const Tensor& x); // [C,H,W] -> [1,H,W]
Tensor channel_max(const Tensor& x);  // [C,H,W] -> [1,H,W]

// x [In], weight [Out,In], bias [Out] -> [Out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat_channels(const std::vector<Tensor>& parts); // along dim 0

// Channels [c0, c1) of a [C,H,W] tensor.
Tensor slice_channels(const Tensor& x, int c0, int c1);

Tensor reshape(const Tensor& x, Shape new_shape);

// Bilinear with half-pixel-center alignment.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// Mean over the (2r+1)^2 window clipped to the image; O(1) per pixel via
// integral images.
Tensor box_filter(const Tensor& x, int radius);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    long step = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Standard Adam with bias correction; moments are lazily sized on first use.
// A non-finite gradient rejects the whole step.
void adam_step(std::vector<Tensor>& params, AdamState& state, float lr);

} // namespace cpga
