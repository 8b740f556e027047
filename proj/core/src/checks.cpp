#include "vsr/checks.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "vsr/gradcheck.hpp"
#include "vsr/ode.hpp"
#include "vsr/rng.hpp"
#include "vsr/uvit.hpp"

namespace vsr {

namespace {

using Leaves = std::vector<std::pair<std::string, Tensor64>>;

Tensor64 rnd(const Shape& s, uint64_t seed, double stddev = 0.8) {
    Tensor64 t = Tensor64::randn(s, seed, stddev);
    t.set_requires_grad(true);
    return t;
}

// Fixed pseudorandom projection to a scalar so every output element carries
// gradient signal.
Tensor64 weighted(const Tensor64& out, const Tensor64& w) { return reduce_sum(mul(out, w)); }

void add_grad_row(CheckReport& rep, const std::string& name, const Leaves& leaves,
                  const std::function<Tensor64()>& fn, size_t pts = 10) {
    const double tol = 1e-4;
    GradCheckResult r = grad_check(leaves, fn, pts, fnv1a64(name.data(), name.size()));
    CheckRow row;
    row.name = "grad/" + name;
    row.value = r.max_rel_err;
    row.pass = r.ok(tol);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu points, max rel err %.3g (tol 1e-4), worst at %s",
                  r.checked, r.max_rel_err, r.worst.empty() ? "-" : r.worst.c_str());
    row.detail = buf;
    rep.rows.push_back(std::move(row));
}

void add_value_row(CheckReport& rep, const std::string& name, double value, bool pass,
                   const std::string& detail) {
    rep.rows.push_back(CheckRow{name, pass, value, detail});
}

}  // namespace

CheckReport grad_check_report() {
    CheckReport rep;

    {
        Tensor64 a = rnd({3, 4}, 0x11), b = rnd({4, 2}, 0x12);
        Tensor64 w = Tensor64::randn({3, 2}, 0x13, 1.0);
        add_grad_row(rep, "matmul", {{"a", a}, {"b", b}},
                     [&] { return weighted(matmul(a, b), w); });
    }
    {
        Tensor64 a = rnd({4, 5}, 0x21), b = rnd({4, 5}, 0x22);
        Tensor64 w = Tensor64::randn({4, 5}, 0x23, 1.0);
        add_grad_row(rep, "add", {{"a", a}, {"b", b}}, [&] { return weighted(add(a, b), w); });
        add_grad_row(rep, "sub", {{"a", a}, {"b", b}}, [&] { return weighted(sub(a, b), w); });
        add_grad_row(rep, "mul", {{"a", a}, {"b", b}}, [&] { return weighted(mul(a, b), w); });
        add_grad_row(rep, "scale", {{"a", a}}, [&] { return weighted(scale(a, 1.7), w); });
        add_grad_row(rep, "gelu", {{"a", a}}, [&] { return weighted(gelu(a), w); });
        add_grad_row(rep, "mse", {{"a", a}, {"b", b}}, [&] { return mse(a, b); });
        add_grad_row(rep, "reduce_sum", {{"a", a}}, [&] { return reduce_sum(mul(a, w)); });
        add_grad_row(rep, "reduce_mean", {{"a", a}}, [&] { return reduce_mean(mul(a, w)); });
    }
    {
        Tensor64 x = rnd({4, 6}, 0x31);
        Tensor64 gamma = rnd({6}, 0x32, 0.3);
        Tensor64 beta = rnd({6}, 0x33, 0.3);
        Tensor64 w = Tensor64::randn({4, 6}, 0x34, 1.0);
        add_grad_row(rep, "layernorm", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
                     [&] { return weighted(layernorm(x, gamma, beta, 1e-5), w); });
        add_grad_row(rep, "softmax_rows", {{"x", x}},
                     [&] { return weighted(softmax_rows(x), w); });
        add_grad_row(rep, "reshape", {{"x", x}},
                     [&] { return weighted(reshape(x, {3, 8}), Tensor64::randn({3, 8}, 0x35, 1.0)); });
        add_grad_row(rep, "slice", {{"x", x}},
                     [&] { return weighted(slice(x, 1, 1, 3), Tensor64::randn({4, 3}, 0x36, 1.0)); });
    }
    {
        Tensor64 x = rnd({2, 3, 4}, 0x41);
        Tensor64 w = Tensor64::randn({4, 2, 3}, 0x42, 1.0);
        add_grad_row(rep, "permute", {{"x", x}},
                     [&] { return weighted(permute(x, {2, 0, 1}), w); });
    }
    {
        Tensor64 a = rnd({3, 4}, 0x51), b = rnd({2, 4}, 0x52);
        Tensor64 w = Tensor64::randn({5, 4}, 0x53, 1.0);
        add_grad_row(rep, "concat", {{"a", a}, {"b", b}},
                     [&] { return weighted(concat(a, b, 0), w); });
    }
    {
        Tensor64 row = rnd({12}, 0x61);
        Tensor64 w = Tensor64::randn({4, 12}, 0x62, 1.0);
        add_grad_row(rep, "repeat_rows", {{"row", row}},
                     [&] { return weighted(repeat_rows(row, 4), w); });
    }

    // Smallest full velocity model: every parameter plus the input state.
    {
        UViTConfig cfg;
        cfg.depth = 2;
        cfg.heads = 2;
        cfg.dim = 8;
        cfg.mlp_ratio = 2;
        cfg.grid = 2;
        cfg.state_channels = 3;
        UViTT<double> m = UViTT<double>::init(cfg, 0x71);
        Leaves leaves = m.named_params();
        uint64_t k = 0;
        for (auto& np : leaves) {
            // The zero-initialized head would block gradient flow upstream;
            // check the model at a random point instead.
            Tensor64 r = Tensor64::randn(np.second.shape(), derive_seed(0x72, ++k), 0.4);
            std::copy(r.data(), r.data() + r.numel(), np.second.data());
            np.second.set_requires_grad(true);
        }
        Tensor64 state = rnd({3, 2, 2}, 0x73);
        leaves.emplace_back("state", state);
        Tensor64 w = Tensor64::randn({3, 2, 2}, 0x74, 1.0);
        add_grad_row(rep, "uvit_smallest", leaves, [&] { return weighted(m.forward(state, 0.37), w); });
    }
    return rep;
}

CheckReport solver_check_report() {
    CheckReport rep;
    const VelocityFn<double> fexp = [](const std::vector<double>& z, double,
                                       std::vector<double>& out) {
        for (size_t i = 0; i < z.size(); ++i) out[i] = z[i];
    };

    {
        IntegratorConfig cfg;
        cfg.steps = 100;
        auto res = integrate<double>(fexp, {1.0}, cfg);
        const double err = std::fabs(res.z[0] - std::exp(1.0));
        add_value_row(rep, "solver/exp-growth", err, err < 1e-10,
                      "|z(1) - e| at 100 fixed steps, tol 1e-10");
        add_value_row(rep, "solver/eval-budget", double(res.rec.nfev),
                      res.rec.nfev == 1 + 6 * 100, "function evaluations, expected 601 (FSAL)");
        add_value_row(rep, "solver/final-time", res.rec.ts.back(), res.rec.ts.back() == 1.0,
                      "last grid point must be exactly 1");
    }
    {
        std::vector<double> errs;
        for (int n : {10, 20, 40, 80}) {
            IntegratorConfig cfg;
            cfg.steps = n;
            auto res = integrate<double>(fexp, {1.0}, cfg);
            errs.push_back(std::fabs(res.z[0] - std::exp(1.0)));
        }
        double order_sum = 0;
        for (size_t i = 0; i + 1 < errs.size(); ++i) order_sum += std::log2(errs[i] / errs[i + 1]);
        const double order = order_sum / double(errs.size() - 1);
        add_value_row(rep, "solver/convergence-order", order, std::fabs(order - 5.0) <= 0.3,
                      "mean log2 error ratio over three halvings, expected 5 +/- 0.3");
    }
    {
        const VelocityFn<double> fconst = [](const std::vector<double>&, double,
                                             std::vector<double>& out) {
            out[0] = -0.75;
            out[1] = 0.31;
        };
        IntegratorConfig cfg;
        cfg.steps = 100;
        auto res = integrate<double>(fconst, {2.0, -1.0}, cfg);
        const double err = std::max(std::fabs(res.z[0] - (2.0 - 0.75)),
                                    std::fabs(res.z[1] - (-1.0 + 0.31)));
        double max_est = 0;
        for (double e : res.rec.err_norms) max_est = std::max(max_est, std::fabs(e));
        add_value_row(rep, "solver/constant-velocity", err, err < 1e-13 && max_est < 1e-14,
                      "drift from z0 + c and embedded estimate, both ~round-off");
    }
    {
        const VelocityFn<double> frot = [](const std::vector<double>& z, double,
                                           std::vector<double>& out) {
            out[0] = -z[1];
            out[1] = z[0];
        };
        IntegratorConfig cfg;
        cfg.steps = 100;
        auto res = integrate<double>(frot, {1.0, 0.0}, cfg);
        const double err = std::max(std::fabs(res.z[0] - std::cos(1.0)),
                                    std::fabs(res.z[1] - std::sin(1.0)));
        add_value_row(rep, "solver/rotation", err, err < 1e-8,
                      "|z(1) - (cos 1, sin 1)| at 100 fixed steps, tol 1e-8");
    }
    {
        IntegratorConfig cfg;
        cfg.mode = OdeMode::adaptive;
        cfg.rtol = 1e-8;
        cfg.atol = 1e-10;
        auto res = integrate<double>(fexp, {1.0}, cfg);
        const double err = std::fabs(res.z[0] - std::exp(1.0));
        add_value_row(rep, "solver/adaptive-exp", err,
                      err < 1e-6 && res.rec.ts.back() == 1.0,
                      "adaptive mode reaches t=1 within tolerance");
    }
    return rep;
}

std::string render_check_report(const CheckReport& rep) {
    std::string out;
    size_t passed = 0;
    for (const auto& r : rep.rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "[%s] %-28s value %.6g  (%s)\n",
                      r.pass ? "PASS" : "FAIL", r.name.c_str(), r.value, r.detail.c_str());
        out += buf;
        if (r.pass) ++passed;
    }
    out += std::to_string(passed) + "/" + std::to_string(rep.rows.size()) + " checks passed\n";
    return out;
}

}  // namespace vsr
