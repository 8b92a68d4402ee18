#pragma once

// Central-finite-difference gradient verification.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cpga/tensor.hpp"

namespace gradcheck {

struct Result {
    bool ok = true;
    float worst_rel = 0.0f;
    std::string detail;
};

// Compares autodiff gradients of `loss_fn` (which must rebuild the graph on
// every call) against central differences for each listed parameter.
// `indices_per_tensor` = 0 checks every element.
//
// The forward pass runs in float32, so the difference quotient carries
// roundoff of order eps*|loss|/(2h); differences below that floor are not
// resolvable by the oracle and do not count as mismatches.
inline Result check(const std::function<cpga::Tensor()>& loss_fn,
                    std::vector<cpga::Tensor> params, float h = 1e-3f, float tol = 1e-3f,
                    int indices_per_tensor = 0, uint64_t pick_seed = 7) {
    using namespace cpga;
    Result res;

    for (auto& p : params) {
        p.zero_grad();
    }
    float loss_scale = 0.0f;
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = loss_fn();
        loss_scale = std::fabs(loss.item());
        tape.backward(loss);
    }
    const float noise_floor =
        32.0f * 1.19e-7f * std::max(loss_scale, 1e-2f) / (2.0f * h);
    std::vector<std::vector<float>> ad_grads;
    ad_grads.reserve(params.size());
    for (auto& p : params) {
        ad_grads.push_back(p.grad_vec());
    }

    uint64_t pick_state = pick_seed;
    auto next_pick = [&pick_state](int n) {
        pick_state = pick_state * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<int>((pick_state >> 33) % static_cast<uint64_t>(n));
    };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<int> idx;
        if (indices_per_tensor <= 0 || indices_per_tensor >= p.size()) {
            idx.resize(static_cast<size_t>(p.size()));
            for (int i = 0; i < p.size(); ++i) {
                idx[static_cast<size_t>(i)] = i;
            }
        } else {
            for (int i = 0; i < indices_per_tensor; ++i) {
                idx.push_back(next_pick(p.size()));
            }
        }
        for (int i : idx) {
            const float saved = p.data()[i];
            p.data()[i] = saved + h;
            const float up = loss_fn().item();
            p.data()[i] = saved - h;
            const float down = loss_fn().item();
            p.data()[i] = saved;

            const float fd = (up - down) / (2.0f * h);
            const float ad = ad_grads[pi][static_cast<size_t>(i)];
            const float denom = std::max({std::fabs(fd), std::fabs(ad), 1e-4f});
            const float rel = std::fabs(fd - ad) / denom;
            if (std::fabs(fd - ad) > std::max(noise_floor, 1e-5f) && rel > tol) {
                res.ok = false;
                if (res.detail.empty()) {
                    res.detail = "param " + std::to_string(pi) + " idx " + std::to_string(i) +
                                 ": ad=" + std::to_string(ad) + " fd=" + std::to_string(fd);
                }
            }
            if (std::fabs(fd - ad) > std::max(noise_floor, 1e-5f)) {
                res.worst_rel = std::max(res.worst_rel, rel);
            }
        }
    }
    return res;
}

} // namespace gradcheck
