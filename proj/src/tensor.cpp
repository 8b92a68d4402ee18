#include "cpga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace cpga {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        os << (i ? "," : "") << s[i];
    }
    os << "]";
    return os.str();
}

int shape_size(const Shape& s) {
    int n = 1;
    for (int d : s) {
        if (d <= 0) {
            throw ShapeError("non-positive dimension in shape " + shape_str(s));
        }
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(static_cast<size_t>(shape_size(t.node_->shape)), 0.0f);
    if (requires_grad) {
        t.set_requires_grad(true);
    }
    return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    if (static_cast<int>(values.size()) != shape_size(t.node_->shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(t.node_->shape));
    }
    t.node_->data = std::move(values);
    if (requires_grad) {
        t.set_requires_grad(true);
    }
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::op_output(Shape shape, bool requires_grad) {
    Tensor t = zeros(std::move(shape), false);
    if (requires_grad) {
        t.node_->requires_grad = true;
        t.node_->grad.assign(t.node_->data.size(), 0.0f);
        t.node_->leaf = false;
    }
    return t;
}

void Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    node_->leaf = v;
    if (v) {
        node_->grad.assign(node_->data.size(), 0.0f);
    } else {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

float Tensor::at(int c, int y, int x) const {
    const Shape& s = node_->shape;
    if (s.size() != 3 || c >= s[0] || y >= s[1] || x >= s[2] || c < 0 || y < 0 || x < 0) {
        throw ShapeError("at(" + std::to_string(c) + "," + std::to_string(y) + "," +
                         std::to_string(x) + ") out of range for " + shape_str(s));
    }
    return node_->data[static_cast<size_t>((c * s[1] + y) * s[2] + x)];
}

float& Tensor::at(int c, int y, int x) {
    const Shape& s = node_->shape;
    if (s.size() != 3 || c >= s[0] || y >= s[1] || x >= s[2] || c < 0 || y < 0 || x < 0) {
        throw ShapeError("at(" + std::to_string(c) + "," + std::to_string(y) + "," +
                         std::to_string(x) + ") out of range for " + shape_str(s));
    }
    return node_->data[static_cast<size_t>((c * s[1] + y) * s[2] + x)];
}

Tensor Tensor::clone() const {
    return from_vector(node_->shape, node_->data);
}

void check_finite(const Tensor& t, const char* what) {
    for (float v : t.vec()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + " produced a non-finite value");
        }
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward requires a scalar loss");
    }
    if (!loss.requires_grad()) {
        return; // loss does not depend on any tracked tensor
    }
    const_cast<Tensor&>(loss).grad_vec()[0] += 1.0f;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->fn();
    }
    // Intermediate grads are per-pass scratch; only leaves accumulate.
    for (auto& e : entries_) {
        if (!e.output.is_leaf() && e.output.requires_grad()) {
            e.output.zero_grad();
        }
    }
}

namespace {

bool track(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) {
        return false;
    }
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

void accum(Tensor& t, size_t i, float v) {
    t.grad_vec()[i] += v;
}

// ---------------------------------------------------------------------------
// Broadcast resolution for binary ops
// ---------------------------------------------------------------------------

enum class Bcast { Same, Scalar, Plane, Channel };

Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) {
        return Bcast::Same;
    }
    if (b.size() == 1) {
        return Bcast::Scalar;
    }
    if (a.rank() == 3 && b.rank() == 3) {
        if (b.dim(0) == 1 && b.dim(1) == a.dim(1) && b.dim(2) == a.dim(2)) {
            return Bcast::Plane;
        }
        if (b.dim(0) == a.dim(0) && b.dim(1) == 1 && b.dim(2) == 1) {
            return Bcast::Channel;
        }
    }
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

struct BcastIndex {
    Bcast kind;
    int plane; // H*W for Plane/Channel mapping

    size_t operator()(size_t i) const {
        switch (kind) {
        case Bcast::Same: return i;
        case Bcast::Scalar: return 0;
        case Bcast::Plane: return i % static_cast<size_t>(plane);
        case Bcast::Channel: return i / static_cast<size_t>(plane);
        }
        return 0;
    }
};

// fwd(av, bv) -> value; da(av, bv) and db(av, bv) -> partial derivatives.
template <typename F, typename Da, typename Db>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F fwd, Da da, Db db) {
    const Bcast kind = resolve_bcast(a, b, name);
    const int plane = a.rank() == 3 ? a.dim(1) * a.dim(2) : 1;
    const BcastIndex bi{kind, plane};

    const bool rg = track({&a, &b});
    Tensor out = Tensor::op_output(a.shape(), rg);
    const size_t n = static_cast<size_t>(a.size());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (size_t i = 0; i < n; ++i) {
        po[i] = fwd(pa[i], pb[bi(i)]);
    }
    check_finite(out, name);

    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record(out, [ac, bc, oc, bi, n, da, db]() mutable {
            const float* pa = ac.data();
            const float* pb = bc.data();
            const float* go = oc.grad();
            if (ac.requires_grad()) {
                for (size_t i = 0; i < n; ++i) {
                    accum(ac, i, go[i] * da(pa[i], pb[bi(i)]));
                }
            }
            if (bc.requires_grad()) {
                for (size_t i = 0; i < n; ++i) {
                    accum(bc, bi(i), go[i] * db(pa[i], pb[bi(i)]));
                }
            }
        });
    }
    return out;
}

template <typename F, typename D>
Tensor unary_op(const char* name, const Tensor& a, F fwd, D deriv) {
    const bool rg = track({&a});
    Tensor out = Tensor::op_output(a.shape(), rg);
    const size_t n = static_cast<size_t>(a.size());
    const float* pa = a.data();
    float* po = out.data();
    for (size_t i = 0; i < n; ++i) {
        po[i] = fwd(pa[i]);
    }
    check_finite(out, name);

    if (rg) {
        Tensor ac = a, oc = out;
        Tape::active()->record(out, [ac, oc, n, deriv]() mutable {
            const float* pa = ac.data();
            const float* po = oc.data();
            const float* go = oc.grad();
            for (size_t i = 0; i < n; ++i) {
                accum(ac, i, go[i] * deriv(pa[i], po[i]));
            }
        });
    }
    return out;
}

float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](float x, float y) { return x + y; },
        [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b,
        [](float x, float y) { return x / std::max(y, kEpsSafe); },
        [](float, float y) { return 1.0f / std::max(y, kEpsSafe); },
        [](float x, float y) {
            if (y < kEpsSafe) {
                return 0.0f; // clamped denominator is locally constant
            }
            return -x / (y * y);
        });
}

Tensor add_scalar(const Tensor& a, float s) {
    return unary_op(
        "add_scalar", a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float s) {
    return unary_op(
        "mul_scalar", a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor abs(const Tensor& a) {
    return unary_op(
        "abs", a, [](float x) { return std::fabs(x); },
        [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, [](float x) { return std::log(std::max(x, kEpsSafe)); },
        [](float x, float) { return x < kEpsSafe ? 0.0f : 1.0f / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a, [](float x) { return stable_sigmoid(x); },
        [](float, float y) { return y * (1.0f - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor softplus(const Tensor& a) {
    return unary_op(
        "softplus", a,
        [](float x) {
            if (x > 20.0f) {
                return x;
            }
            if (x < -20.0f) {
                return std::exp(x);
            }
            return std::log1p(std::exp(x));
        },
        [](float x, float) { return stable_sigmoid(x); });
}

Tensor square(const Tensor& a) {
    return unary_op(
        "square", a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    if (lo > hi) {
        throw ShapeError("clamp: lo > hi");
    }
    return unary_op(
        "clamp", a, [lo, hi](float x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor pow(const Tensor& a, float p) {
    return unary_op(
        "pow", a,
        [p](float x) {
            return static_cast<float>(std::pow(static_cast<double>(std::max(x, kEpsSafe)),
                                               static_cast<double>(p)));
        },
        [p](float x, float y) {
            const float b = std::max(x, kEpsSafe);
            if (x < kEpsSafe) {
                return 0.0f;
            }
            return p * y / b;
        });
}

Tensor pow(const Tensor& a, const Tensor& p) {
    if (p.size() != 1) {
        throw ShapeError("pow: exponent must be a scalar tensor, got " + shape_str(p.shape()));
    }
    const bool rg = track({&a, &p});
    Tensor out = Tensor::op_output(a.shape(), rg);
    const size_t n = static_cast<size_t>(a.size());
    const double pe = static_cast<double>(p.item());
    const float* pa = a.data();
    float* po = out.data();
    for (size_t i = 0; i < n; ++i) {
        po[i] = static_cast<float>(
            std::pow(static_cast<double>(std::max(pa[i], kEpsSafe)), pe));
    }
    check_finite(out, "pow");

    if (rg) {
        Tensor ac = a, pc = p, oc = out;
        Tape::active()->record(out, [ac, pc, oc, n]() mutable {
            const float* pa = ac.data();
            const float* po = oc.data();
            const float* go = oc.grad();
            const float pe = pc.item();
            if (ac.requires_grad()) {
                for (size_t i = 0; i < n; ++i) {
                    if (pa[i] < kEpsSafe) {
                        continue;
                    }
                    accum(ac, i, go[i] * pe * po[i] / pa[i]);
                }
            }
            if (pc.requires_grad()) {
                double acc = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    const float b = std::max(pa[i], kEpsSafe);
                    acc += static_cast<double>(go[i]) * static_cast<double>(po[i]) *
                           std::log(static_cast<double>(b));
                }
                accum(pc, 0, static_cast<float>(acc));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    const bool rg = track({&a});
    double acc = 0.0;
    for (float v : a.vec()) {
        acc += static_cast<double>(v);
    }
    Tensor out = Tensor::op_output({1}, rg);
    out.data()[0] = static_cast<float>(acc);
    check_finite(out, "sum");
    if (rg) {
        Tensor ac = a, oc = out;
        Tape::active()->record(out, [ac, oc]() mutable {
            const float g = oc.grad()[0];
            float* ga = ac.grad();
            const size_t n = static_cast<size_t>(ac.size());
            for (size_t i = 0; i < n; ++i) {
                ga[i] += g;
            }
        });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    const bool rg = track({&a});
    double acc = 0.0;
    for (float v : a.vec()) {
        acc += static_cast<double>(v);
    }
    const float inv_n = 1.0f / static_cast<float>(a.size());
    Tensor out = Tensor::op_output({1}, rg);
    out.data()[0] = static_cast<float>(acc / static_cast<double>(a.size()));
    check_finite(out, "mean");
    if (rg) {
        Tensor ac = a, oc = out;
        Tape::active()->record(out, [ac, oc, inv_n]() mutable {
            const float g = oc.grad()[0] * inv_n;
            float* ga = ac.grad();
            const size_t n = static_cast<size_t>(ac.size());
            for (size_t i = 0; i < n; ++i) {
                ga[i] += g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

void conv2d_check(const Tensor& input, const Tensor& weight, const Tensor& bias,
                  int stride, int padding) {
    if (input.rank() != 3) {
        throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    }
    if (weight.rank() != 4) {
        throw ShapeError("conv2d: weight must be [Co,Ci,k,k], got " + shape_str(weight.shape()));
    }
    if (weight.dim(2) != weight.dim(3)) {
        throw ShapeError("conv2d: kernel must be square, got " + shape_str(weight.shape()));
    }
    if (weight.dim(2) % 2 == 0) {
        throw ShapeError("conv2d: kernel size must be odd, got k=" + std::to_string(weight.dim(2)));
    }
    if (weight.dim(1) != input.dim(0)) {
        throw ShapeError("conv2d: weight C_in=" + std::to_string(weight.dim(1)) +
                         " does not match input channels=" + std::to_string(input.dim(0)));
    }
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match C_out=" + std::to_string(weight.dim(0)));
    }
    if (stride < 1) {
        throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    }
    if (padding < 0) {
        throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    }
    const int k = weight.dim(2);
    const int h = input.dim(1), w = input.dim(2);
    if (h + 2 * padding < k || w + 2 * padding < k) {
        throw ShapeError("conv2d: kernel k=" + std::to_string(k) + " larger than padded input " +
                         shape_str(input.shape()));
    }
    if ((h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0) {
        throw ShapeError("conv2d: output extent not an exact multiple of stride for input " +
                         shape_str(input.shape()));
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    conv2d_check(input, weight, bias, stride, padding);

    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), k = weight.dim(2);
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;

    const bool rg = track({&input, &weight, &bias});
    Tensor out = Tensor::op_output({co, ho, wo}, rg);

    const float* pin = input.data();
    const float* pw = weight.data();
    const float* pb = bias.data();
    float* pout = out.data();

    parallel_for(co * ho, [&](int begin, int end) {
        std::vector<double> acc(static_cast<size_t>(wo));
        for (int row = begin; row < end; ++row) {
            const int oc = row / ho;
            const int oy = row % ho;
            std::fill(acc.begin(), acc.end(), static_cast<double>(pb[oc]));
            for (int ic = 0; ic < ci; ++ic) {
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const float* in_row = pin + (static_cast<size_t>(ic) * h + iy) * w;
                    const float* w_row = pw + ((static_cast<size_t>(oc) * ci + ic) * k + ky) * k;
                    if (stride == 1) {
                        for (int kx = 0; kx < k; ++kx) {
                            const double wv = static_cast<double>(w_row[kx]);
                            const int lo = std::max(0, padding - kx);
                            const int hi = std::min(wo, w + padding - kx);
                            const float* src = in_row + (lo + kx - padding);
                            for (int ox = lo; ox < hi; ++ox) {
                                acc[static_cast<size_t>(ox)] += wv * static_cast<double>(*src++);
                            }
                        }
                    } else {
                        for (int kx = 0; kx < k; ++kx) {
                            const double wv = static_cast<double>(w_row[kx]);
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride - padding + kx;
                                if (ix >= 0 && ix < w) {
                                    acc[static_cast<size_t>(ox)] +=
                                        wv * static_cast<double>(in_row[ix]);
                                }
                            }
                        }
                    }
                }
            }
            float* out_row = pout + static_cast<size_t>(row) * wo;
            for (int ox = 0; ox < wo; ++ox) {
                out_row[ox] = static_cast<float>(acc[static_cast<size_t>(ox)]);
            }
        }
    });
    check_finite(out, "conv2d");

    if (rg) {
        Tensor in_c = input, w_c = weight, b_c = bias, out_c = out;
        Tape::active()->record(out, [in_c, w_c, b_c, out_c, stride, padding]() mutable {
            const int ci = in_c.dim(0), h = in_c.dim(1), w = in_c.dim(2);
            const int co = w_c.dim(0), k = w_c.dim(2);
            const int ho = out_c.dim(1), wo = out_c.dim(2);
            const float* g = out_c.grad();
            const float* pin = in_c.data();
            const float* pw = w_c.data();

            if (b_c.requires_grad()) {
                float* gb = b_c.grad();
                for (int oc = 0; oc < co; ++oc) {
                    double acc = 0.0;
                    const float* gp = g + static_cast<size_t>(oc) * ho * wo;
                    for (int i = 0; i < ho * wo; ++i) {
                        acc += static_cast<double>(gp[i]);
                    }
                    gb[oc] += static_cast<float>(acc);
                }
            }

            if (w_c.requires_grad()) {
                float* gw = w_c.grad();
                parallel_for(co, [&](int begin, int end) {
                    for (int oc = begin; oc < end; ++oc) {
                        for (int ic = 0; ic < ci; ++ic) {
                            for (int ky = 0; ky < k; ++ky) {
                                for (int kx = 0; kx < k; ++kx) {
                                    double acc = 0.0;
                                    for (int oy = 0; oy < ho; ++oy) {
                                        const int iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) {
                                            continue;
                                        }
                                        const float* g_row =
                                            g + (static_cast<size_t>(oc) * ho + oy) * wo;
                                        const float* in_row =
                                            pin + (static_cast<size_t>(ic) * h + iy) * w;
                                        if (stride == 1) {
                                            const int lo = std::max(0, padding - kx);
                                            const int hi = std::min(wo, w + padding - kx);
                                            const float* src = in_row + (lo + kx - padding);
                                            for (int ox = lo; ox < hi; ++ox) {
                                                acc += static_cast<double>(g_row[ox]) *
                                                       static_cast<double>(*src++);
                                            }
                                        } else {
                                            for (int ox = 0; ox < wo; ++ox) {
                                                const int ix = ox * stride - padding + kx;
                                                if (ix >= 0 && ix < w) {
                                                    acc += static_cast<double>(g_row[ox]) *
                                                           static_cast<double>(in_row[ix]);
                                                }
                                            }
                                        }
                                    }
                                    gw[((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx] +=
                                        static_cast<float>(acc);
                                }
                            }
                        }
                    }
                });
            }

            if (in_c.requires_grad()) {
                float* gin = in_c.grad();
                if (stride == 1) {
                    parallel_for(ci * h, [&](int begin, int end) {
                        std::vector<double> acc(static_cast<size_t>(w));
                        for (int row = begin; row < end; ++row) {
                            const int ic = row / h;
                            const int iy = row % h;
                            std::fill(acc.begin(), acc.end(), 0.0);
                            for (int oc = 0; oc < co; ++oc) {
                                for (int ky = 0; ky < k; ++ky) {
                                    const int oy = iy + padding - ky;
                                    if (oy < 0 || oy >= ho) {
                                        continue;
                                    }
                                    const float* g_row =
                                        g + (static_cast<size_t>(oc) * ho + oy) * wo;
                                    const float* w_row =
                                        pw + ((static_cast<size_t>(oc) * ci + ic) * k + ky) * k;
                                    for (int kx = 0; kx < k; ++kx) {
                                        const double wv = static_cast<double>(w_row[kx]);
                                        const int lo = std::max(0, kx - padding);
                                        const int hi = std::min(w, wo + kx - padding);
                                        const float* src = g_row + (lo + padding - kx);
                                        for (int ix = lo; ix < hi; ++ix) {
                                            acc[static_cast<size_t>(ix)] +=
                                                wv * static_cast<double>(*src++);
                                        }
                                    }
                                }
                            }
                            float* gin_row = gin + static_cast<size_t>(row) * w;
                            for (int ix = 0; ix < w; ++ix) {
                                gin_row[ix] += static_cast<float>(acc[static_cast<size_t>(ix)]);
                            }
                        }
                    });
                } else {
                    std::vector<double> acc(static_cast<size_t>(ci) * h * w, 0.0);
                    for (int oc = 0; oc < co; ++oc) {
                        for (int oy = 0; oy < ho; ++oy) {
                            const float* g_row = g + (static_cast<size_t>(oc) * ho + oy) * wo;
                            for (int ox = 0; ox < wo; ++ox) {
                                const double gv = static_cast<double>(g_row[ox]);
                                if (gv == 0.0) {
                                    continue;
                                }
                                for (int ic = 0; ic < ci; ++ic) {
                                    for (int ky = 0; ky < k; ++ky) {
                                        const int iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) {
                                            continue;
                                        }
                                        for (int kx = 0; kx < k; ++kx) {
                                            const int ix = ox * stride - padding + kx;
                                            if (ix < 0 || ix >= w) {
                                                continue;
                                            }
                                            acc[(static_cast<size_t>(ic) * h + iy) * w + ix] +=
                                                gv * static_cast<double>(
                                                         pw[((static_cast<size_t>(oc) * ci + ic) *
                                                                 k +
                                                             ky) *
                                                                k +
                                                            kx]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    const size_t n = acc.size();
                    for (size_t i = 0; i < n; ++i) {
                        gin[i] += static_cast<float>(acc[i]);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling and per-pixel channel reductions
// ---------------------------------------------------------------------------

namespace {

void require_chw(const Tensor& x, const char* op) {
    if (x.rank() != 3) {
        throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_str(x.shape()));
    }
}

} // namespace

Tensor global_avg_pool(const Tensor& x) {
    require_chw(x, "global_avg_pool");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int plane = h * w;
    const bool rg = track({&x});
    Tensor out = Tensor::op_output({c}, rg);
    const float* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const float* p = px + static_cast<size_t>(ch) * plane;
        for (int i = 0; i < plane; ++i) {
            acc += static_cast<double>(p[i]);
        }
        out.data()[ch] = static_cast<float>(acc / plane);
    }
    check_finite(out, "global_avg_pool");
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, c, plane]() mutable {
            float* gx = xc.grad();
            const float* go = oc.grad();
            for (int ch = 0; ch < c; ++ch) {
                const float g = go[ch] / static_cast<float>(plane);
                float* p = gx + static_cast<size_t>(ch) * plane;
                for (int i = 0; i < plane; ++i) {
                    p[i] += g;
                }
            }
        });
    }
    return out;
}

Tensor global_max_pool(const Tensor& x) {
    require_chw(x, "global_max_pool");
    const int c = x.dim(0), plane = x.dim(1) * x.dim(2);
    const bool rg = track({&x});
    Tensor out = Tensor::op_output({c}, rg);
    std::vector<int> argmax(static_cast<size_t>(c));
    const float* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
        const float* p = px + static_cast<size_t>(ch) * plane;
        int best = 0;
        for (int i = 1; i < plane; ++i) {
            if (p[i] > p[best]) {
                best = i;
            }
        }
        argmax[static_cast<size_t>(ch)] = best;
        out.data()[ch] = p[best];
    }
    check_finite(out, "global_max_pool");
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, argmax, c, plane]() mutable {
            float* gx = xc.grad();
            const float* go = oc.grad();
            for (int ch = 0; ch < c; ++ch) {
                gx[static_cast<size_t>(ch) * plane + argmax[static_cast<size_t>(ch)]] += go[ch];
            }
        });
    }
    return out;
}

Tensor channel_mean(const Tensor& x) {
    require_chw(x, "channel_mean");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int plane = h * w;
    const bool rg = track({&x});
    Tensor out = Tensor::op_output({1, h, w}, rg);
    const float* px = x.data();
    float* po = out.data();
    const float inv_c = 1.0f / static_cast<float>(c);
    for (int i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            acc += static_cast<double>(px[static_cast<size_t>(ch) * plane + i]);
        }
        po[i] = static_cast<float>(acc) * inv_c;
    }
    check_finite(out, "channel_mean");
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, c, plane, inv_c]() mutable {
            float* gx = xc.grad();
            const float* go = oc.grad();
            for (int i = 0; i < plane; ++i) {
                const float g = go[i] * inv_c;
                for (int ch = 0; ch < c; ++ch) {
                    gx[static_cast<size_t>(ch) * plane + i] += g;
                }
            }
        });
    }
    return out;
}

Tensor channel_max(const Tensor& x) {
    require_chw(x, "channel_max");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int plane = h * w;
    const bool rg = track({&x});
    Tensor out = Tensor::op_output({1, h, w}, rg);
    std::vector<int> argmax(static_cast<size_t>(plane));
    const float* px = x.data();
    float* po = out.data();
    for (int i = 0; i < plane; ++i) {
        int best = 0;
        for (int ch = 1; ch < c; ++ch) {
            if (px[static_cast<size_t>(ch) * plane + i] >
                px[static_cast<size_t>(best) * plane + i]) {
                best = ch;
            }
        }
        argmax[static_cast<size_t>(i)] = best;
        po[i] = px[static_cast<size_t>(best) * plane + i];
    }
    check_finite(out, "channel_max");
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, argmax, plane]() mutable {
            float* gx = xc.grad();
            const float* go = oc.grad();
            for (int i = 0; i < plane; ++i) {
                gx[static_cast<size_t>(argmax[static_cast<size_t>(i)]) * plane + i] += go[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear / concat / reshape
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 1 || weight.rank() != 2 || bias.rank() != 1) {
        throw ShapeError("linear: expected x[In], weight[Out,In], bias[Out]");
    }
    const int in = x.dim(0), out_n = weight.dim(0);
    if (weight.dim(1) != in || bias.dim(0) != out_n) {
        throw ShapeError("linear: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
    }
    const bool rg = track({&x, &weight, &bias});
    Tensor out = Tensor::op_output({out_n}, rg);
    const float* px = x.data();
    const float* pw = weight.data();
    for (int o = 0; o < out_n; ++o) {
        double acc = static_cast<double>(bias.data()[o]);
        const float* w_row = pw + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            acc += static_cast<double>(w_row[i]) * static_cast<double>(px[i]);
        }
        out.data()[o] = static_cast<float>(acc);
    }
    check_finite(out, "linear");
    if (rg) {
        Tensor xc = x, wc = weight, bc = bias, oc = out;
        Tape::active()->record(out, [xc, wc, bc, oc, in, out_n]() mutable {
            const float* go = oc.grad();
            const float* px = xc.data();
            const float* pw = wc.data();
            if (bc.requires_grad()) {
                float* gb = bc.grad();
                for (int o = 0; o < out_n; ++o) {
                    gb[o] += go[o];
                }
            }
            if (wc.requires_grad()) {
                float* gw = wc.grad();
                for (int o = 0; o < out_n; ++o) {
                    for (int i = 0; i < in; ++i) {
                        gw[static_cast<size_t>(o) * in + i] += go[o] * px[i];
                    }
                }
            }
            if (xc.requires_grad()) {
                float* gx = xc.grad();
                for (int i = 0; i < in; ++i) {
                    double acc = 0.0;
                    for (int o = 0; o < out_n; ++o) {
                        acc += static_cast<double>(go[o]) *
                               static_cast<double>(pw[static_cast<size_t>(o) * in + i]);
                    }
                    gx[i] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: no inputs");
    }
    const int h = parts[0].dim(1), w = parts[0].dim(2);
    int c_total = 0;
    for (const Tensor& p : parts) {
        require_chw(p, "concat_channels");
        if (p.dim(1) != h || p.dim(2) != w) {
            throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()));
        }
        c_total += p.dim(0);
    }
    bool rg = false;
    if (Tape::active() != nullptr) {
        for (const Tensor& p : parts) {
            if (p.requires_grad()) {
                rg = true;
                break;
            }
        }
    }
    Tensor out = Tensor::op_output({c_total, h, w}, rg);
    size_t off = 0;
    for (const Tensor& p : parts) {
        std::memcpy(out.data() + off, p.data(), sizeof(float) * static_cast<size_t>(p.size()));
        off += static_cast<size_t>(p.size());
    }
    if (rg) {
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        Tape::active()->record(out, [pc, oc]() mutable {
            const float* go = oc.grad();
            size_t off = 0;
            for (Tensor& p : pc) {
                const size_t n = static_cast<size_t>(p.size());
                if (p.requires_grad()) {
                    float* gp = p.grad();
                    for (size_t i = 0; i < n; ++i) {
                        gp[i] += go[off + i];
                    }
                }
                off += n;
            }
        });
    }
    return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
    require_chw(x, "slice_channels");
    if (c0 < 0 || c1 <= c0 || c1 > x.dim(0)) {
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for " + shape_str(x.shape()));
    }
    const int h = x.dim(1), w = x.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    const bool rg = track({&x});
    Tensor out = Tensor::op_output({c1 - c0, h, w}, rg);
    std::memcpy(out.data(), x.data() + static_cast<size_t>(c0) * plane,
                sizeof(float) * static_cast<size_t>(c1 - c0) * plane);
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, c0, plane]() mutable {
            float* gx = xc.grad() + static_cast<size_t>(c0) * plane;
            const float* go = oc.grad();
            const size_t n = static_cast<size_t>(oc.size());
            for (size_t i = 0; i < n; ++i) {
                gx[i] += go[i];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_size(new_shape) != x.size()) {
        throw ShapeError("reshape: size mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(new_shape));
    }
    const bool rg = track({&x});
    Tensor out = Tensor::op_output(std::move(new_shape), rg);
    std::memcpy(out.data(), x.data(), sizeof(float) * static_cast<size_t>(x.size()));
    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc]() mutable {
            const float* go = oc.grad();
            float* gx = xc.grad();
            const size_t n = static_cast<size_t>(xc.size());
            for (size_t i = 0; i < n; ++i) {
                gx[i] += go[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// resize_bilinear
// ---------------------------------------------------------------------------

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<float> w1; // weight of i1; weight of i0 is 1-w1
};

LerpAxis make_axis(int in_n, int out_n) {
    LerpAxis ax;
    ax.i0.resize(static_cast<size_t>(out_n));
    ax.i1.resize(static_cast<size_t>(out_n));
    ax.w1.resize(static_cast<size_t>(out_n));
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (int o = 0; o < out_n; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
        const int lo = static_cast<int>(std::floor(src));
        ax.i0[static_cast<size_t>(o)] = lo;
        ax.i1[static_cast<size_t>(o)] = std::min(lo + 1, in_n - 1);
        ax.w1[static_cast<size_t>(o)] = static_cast<float>(src - lo);
    }
    return ax;
}

} // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require_chw(x, "resize_bilinear");
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("resize_bilinear: target size must be >= 1");
    }
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const LerpAxis ay = make_axis(h, out_h);
    const LerpAxis axx = make_axis(w, out_w);

    const bool rg = track({&x});
    Tensor out = Tensor::op_output({c, out_h, out_w}, rg);
    const float* px = x.data();
    float* po = out.data();
    for (int ch = 0; ch < c; ++ch) {
        const float* plane = px + static_cast<size_t>(ch) * h * w;
        float* oplane = po + static_cast<size_t>(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay.i0[static_cast<size_t>(oy)], y1 = ay.i1[static_cast<size_t>(oy)];
            const float fy = ay.w1[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = axx.i0[static_cast<size_t>(ox)],
                          x1 = axx.i1[static_cast<size_t>(ox)];
                const float fx = axx.w1[static_cast<size_t>(ox)];
                const float v00 = plane[static_cast<size_t>(y0) * w + x0];
                const float v01 = plane[static_cast<size_t>(y0) * w + x1];
                const float v10 = plane[static_cast<size_t>(y1) * w + x0];
                const float v11 = plane[static_cast<size_t>(y1) * w + x1];
                oplane[static_cast<size_t>(oy) * out_w + ox] =
                    (1.0f - fy) * ((1.0f - fx) * v00 + fx * v01) +
                    fy * ((1.0f - fx) * v10 + fx * v11);
            }
        }
    }
    check_finite(out, "resize_bilinear");

    if (rg) {
        Tensor xc = x, oc = out;
        Tape::active()->record(out, [xc, oc, ay, axx]() mutable {
            const int c = xc.dim(0), h = xc.dim(1), w = xc.dim(2);
            const int oh = oc.dim(1), ow = oc.dim(2);
            float* gx = xc.grad();
            const float* go = oc.grad();
            for (int ch = 0; ch < c; ++ch) {
                float* gplane = gx + static_cast<size_t>(ch) * h * w;
                const float* gop = go + static_cast<size_t>(ch) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y0 = ay.i0[static_cast<size_t>(oy)],
                              y1 = ay.i1[static_cast<size_t>(oy)];
                    const float fy = ay.w1[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x0 = axx.i0[static_cast<size_t>(ox)],
                                  x1 = axx.i1[static_cast<size_t>(ox)];
                        const float fx = axx.w1[static_cast<size_t>(ox)];
                        const float g = gop[static_cast<size_t>(oy) * ow + ox];
                        gplane[static_cast<size_t>(y0) * w + x0] += g * (1.0f - fy) * (1.0f - fx);
                        gplane[static_cast<size_t>(y0) * w + x1] += g * (1.0f - fy) * fx;
                        gplane[static_cast<size_t>(y1) * w + x0] += g * fy * (1.0f - fx);
                        gplane[static_cast<size_t>(y1) * w + x1] += g * fy * fx;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// box_filter
// ---------------------------------------------------------------------------

namespace {

// Windowed sums for one plane via an integral image; `out += sums` when
// `weights` is the source. Window is (2r+1)^2 clipped to bounds.
void box_sums(const float* src, int h, int w, int r, double* out) {
    std::vector<double> integral(static_cast<size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        const float* s = src + static_cast<size_t>(y) * w;
        double* cur = integral.data() + static_cast<size_t>(y + 1) * (w + 1);
        const double* prev = integral.data() + static_cast<size_t>(y) * (w + 1);
        for (int x = 0; x < w; ++x) {
            row += static_cast<double>(s[x]);
            cur[x + 1] = prev[x + 1] + row;
        }
    }
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
        const double* top = integral.data() + static_cast<size_t>(y0) * (w + 1);
        const double* bot = integral.data() + static_cast<size_t>(y1 + 1) * (w + 1);
        double* o = out + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
            o[x] = bot[x1 + 1] - bot[x0] - top[x1 + 1] + top[x0];
        }
    }
}

int window_area(int h, int w, int r, int y, int x) {
    const int ys = std::min(h - 1, y + r) - std::max(0, y - r) + 1;
    const int xs = std::min(w - 1, x + r) - std::max(0, x - r) + 1;
    return ys * xs;
}

} // namespace

Tensor box_filter(const Tensor& x, int radius) {
    require_chw(x, "box_filter");
    if (radius < 0) {
        throw ShapeError("box_filter: radius must be >= 0");
    }
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const bool rg = track({&x});
    Tensor out = Tensor::op_output(x.shape(), rg);
    std::vector<double> sums(static_cast<size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        box_sums(x.data() + static_cast<size_t>(ch) * h * w, h, w, radius, sums.data());
        float* o = out.data() + static_cast<size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                o[static_cast<size_t>(y) * w + xx] = static_cast<float>(
                    sums[static_cast<size_t>(y) * w + xx] / window_area(h, w, radius, y, xx));
            }
        }
    }
    check_finite(out, "box_filter");

    if (rg) {
        Tensor xc = x, oc = out;
        const int r = radius;
        Tape::active()->record(out, [xc, oc, r]() mutable {
            // d/dx_j = sum over windows containing j of g_i / area_i. Window
            // membership is symmetric, so this is a box sum of g / area.
            const int c = xc.dim(0), h = xc.dim(1), w = xc.dim(2);
            float* gx = xc.grad();
            const float* go = oc.grad();
            std::vector<float> weighted(static_cast<size_t>(h) * w);
            std::vector<double> sums(static_cast<size_t>(h) * w);
            for (int ch = 0; ch < c; ++ch) {
                const float* gp = go + static_cast<size_t>(ch) * h * w;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        weighted[static_cast<size_t>(y) * w + xx] =
                            gp[static_cast<size_t>(y) * w + xx] /
                            static_cast<float>(window_area(h, w, r, y, xx));
                    }
                }
                box_sums(weighted.data(), h, w, r, sums.data());
                float* gxp = gx + static_cast<size_t>(ch) * h * w;
                for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) {
                    gxp[i] += static_cast<float>(sums[i]);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, float lr) {
    if (!(lr > 0.0f)) {
        throw ShapeError("adam_step: lr must be > 0");
    }
    if (state.m.size() < params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p];
        if (!t.requires_grad()) {
            throw ShapeError("adam_step: parameter " + std::to_string(p) +
                             " does not require grad");
        }
        if (state.m[p].empty()) {
            state.m[p].assign(static_cast<size_t>(t.size()), 0.0f);
            state.v[p].assign(static_cast<size_t>(t.size()), 0.0f);
        } else if (state.m[p].size() != static_cast<size_t>(t.size())) {
            throw ShapeError("adam_step: moment shape mismatch for parameter " +
                             std::to_string(p));
        }
        const float* g = t.grad();
        for (int i = 0; i < t.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericError("adam_step: non-finite gradient in parameter " +
                                   std::to_string(p) + " at index " + std::to_string(i) +
                                   "; step rejected");
            }
        }
    }

    state.step += 1;
    const double b1 = static_cast<double>(state.beta1);
    const double b2 = static_cast<double>(state.beta2);
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p];
        float* x = t.data();
        const float* g = t.grad();
        float* m = state.m[p].data();
        float* v = state.v[p].data();
        const int n = t.size();
        for (int i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            x[i] = static_cast<float>(static_cast<double>(x[i]) -
                                      static_cast<double>(lr) * m_hat /
                                          (std::sqrt(v_hat) + static_cast<double>(state.eps)));
        }
    }
}

} // namespace cpga
