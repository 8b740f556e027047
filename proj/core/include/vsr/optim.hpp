#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

struct AdamWConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

// AdamW with bias correction and decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// A non-finite gradient anywhere rejects the whole step (no partial update)
// and reports which parameter tripped it.
template <typename T>
class AdamWT {
public:
    explicit AdamWT(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void add_param(const std::string& name, TensorT<T> p) {
        if (p.frozen()) throw UsageError("optimizer: parameter '" + name + "' is frozen");
        if (!p.requires_grad()) throw UsageError("optimizer: parameter '" + name + "' does not require grad");
        Slot s;
        s.name = name;
        s.param = std::move(p);
        s.m.assign(s.param.numel(), T(0));
        s.v.assign(s.param.numel(), T(0));
        slots_.push_back(std::move(s));
    }

    size_t param_count() const { return slots_.size(); }
    uint64_t step_count() const { return step_; }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

    // Applies one update from the params' accumulated .grad buffers.
    // Throws NumericError (state untouched) if any gradient is non-finite.
    void step() {
        for (const auto& s : slots_)
            for (T g : s.param.grad())
                if (!std::isfinite(g))
                    throw NumericError("optimizer: non-finite gradient in parameter '" + s.name + "'");
        ++step_;
        const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        const T bc1 = T(1) - std::pow(b1, T(step_));
        const T bc2 = T(1) - std::pow(b2, T(step_));
        const T lr = T(cfg_.lr), eps = T(cfg_.eps), wd = T(cfg_.weight_decay);
        for (auto& s : slots_) {
            T* p = s.param.data();
            const std::vector<T>& g = s.param.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                s.m[i] = b1 * s.m[i] + (T(1) - b1) * g[i];
                s.v[i] = b2 * s.v[i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = s.m[i] / bc1;
                const T vhat = s.v[i] / bc2;
                p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
            }
        }
    }

private:
    struct Slot {
        std::string name;
        TensorT<T> param;
        std::vector<T> m, v;
    };
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    uint64_t step_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace vsr
