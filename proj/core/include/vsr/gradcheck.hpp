#pragma once

// Central finite-difference verification of reverse-mode gradients, run in
// 64-bit: h = 1e-5 * max(1, |x|), relative error against
// max(|analytic|, |numeric|, 0.01), pass threshold 1e-4.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vsr/rng.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t checked = 0;
    std::string worst;  // "param[i]" of the worst point
    bool ok(double tol = 1e-4) const { return checked > 0 && max_rel_err < tol; }
};

// fn must rebuild the graph from the given leaves and return a scalar loss.
// Each call happens under a fresh tape; FD perturbs leaf values in place.
inline GradCheckResult grad_check(const std::vector<std::pair<std::string, Tensor64>>& leaves,
                                  const std::function<Tensor64()>& fn,
                                  size_t points_per_leaf = 10,
                                  uint64_t seed = 0x9e3779b97f4a7c15ULL) {
    GradCheckResult res;

    // Analytic pass.
    for (auto& [name, t] : leaves) {
        (void)name;
        const_cast<Tensor64&>(t).zero_grad();
    }
    {
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        Tensor64 loss = fn();
        tape.backward(loss);
    }

    Rng rng(seed);
    for (const auto& [name, t] : leaves) {
        Tensor64& leaf = const_cast<Tensor64&>(t);
        const std::vector<double> analytic = leaf.grad();
        const size_t n = leaf.numel();
        const size_t npts = std::min(points_per_leaf, n);
        // Sample distinct indices.
        std::vector<size_t> idx;
        if (npts == n)
            for (size_t i = 0; i < n; ++i) idx.push_back(i);
        else
            while (idx.size() < npts) {
                const size_t cand = size_t(rng.below(n));
                bool dup = false;
                for (size_t j : idx) dup = dup || (j == cand);
                if (!dup) idx.push_back(cand);
            }
        for (size_t i : idx) {
            const double x0 = leaf.data()[i];
            const double h = 1e-5 * std::max(1.0, std::fabs(x0));
            leaf.data()[i] = x0 + h;
            const double fp = fn().item();
            leaf.data()[i] = x0 - h;
            const double fm = fn().item();
            leaf.data()[i] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = analytic[i];
            const double rel = std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), 0.01});
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

}  // namespace vsr
