#include <doctest.h>

#include <cmath>

#include "vsr/ode.hpp"

using namespace vsr;

namespace {

const VelocityFn<double> kZero = [](const std::vector<double>& z, double, std::vector<double>& out) {
    out.assign(z.size(), 0.0);
};

const VelocityFn<double> kIdentity = [](const std::vector<double>& z, double, std::vector<double>& out) {
    out = z;
};

}  // namespace

TEST_CASE("null field leaves the state unchanged with zero error") {
    auto [z, err] = dopri5_step<double>(kZero, {1.5, -2.0}, 0.0, 0.25);
    CHECK(z == std::vector<double>({1.5, -2.0}));
    CHECK(err == 0.0);
}

TEST_CASE("constant field advances exactly with zero error") {
    const VelocityFn<double> f = [](const std::vector<double>& z, double, std::vector<double>& out) {
        out.assign(z.size(), 3.0);
    };
    auto [z, err] = dopri5_step<double>(f, {1.0}, 0.0, 0.5);
    CHECK(z[0] == doctest::Approx(1.0 + 3.0 * 0.5).epsilon(1e-15));
    CHECK(std::fabs(err) < 1e-14);
}

TEST_CASE("step preconditions") {
    CHECK_THROWS_AS((dopri5_step<double>(kZero, {1.0}, 0.0, 0.0)), RangeError);
    CHECK_THROWS_AS((dopri5_step<double>(kZero, {1.0}, 0.0, -0.1)), RangeError);
    CHECK_THROWS_AS((dopri5_step<double>(kZero, {1.0}, 0.9, 0.2)), RangeError);
}

TEST_CASE("non-finite velocity raises an integration error naming t") {
    const VelocityFn<double> f = [](const std::vector<double>& z, double t, std::vector<double>& out) {
        out.assign(z.size(), t > 0.4 ? std::numeric_limits<double>::quiet_NaN() : 1.0);
    };
    IntegratorConfig cfg;
    cfg.steps = 10;
    CHECK_THROWS_WITH_AS((integrate<double>(f, {1.0}, cfg)), doctest::Contains("t ="), NumericError);
}

TEST_CASE("exponential growth reaches e with 1e-10 accuracy at 100 fixed steps") {
    IntegratorConfig cfg;  // dopri5, fixed, 100 steps
    auto res = integrate<double>(kIdentity, {1.0}, cfg);
    CHECK(std::fabs(res.z[0] - std::exp(1.0)) < 1e-10);
    CHECK(res.rec.nfev == 1 + 6 * 100);  // FSAL: 6 fresh evaluations per step
    CHECK(res.rec.ts.front() == 0.0);
    CHECK(res.rec.ts.back() == 1.0);
    for (size_t i = 1; i < res.rec.ts.size(); ++i) CHECK(res.rec.ts[i] > res.rec.ts[i - 1]);
}

TEST_CASE("constant velocity integrates exactly over [0,1]") {
    const VelocityFn<double> f = [](const std::vector<double>& z, double, std::vector<double>& out) {
        out.assign(z.size(), -0.75);
    };
    IntegratorConfig cfg;
    cfg.steps = 7;
    auto res = integrate<double>(f, {2.0}, cfg);
    CHECK(res.z[0] == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("planar rotation lands on (cos 1, sin 1) within 1e-8") {
    const VelocityFn<double> f = [](const std::vector<double>& z, double, std::vector<double>& out) {
        out = {z[1], -z[0]};
    };
    // dz/dt = [[0,1],[-1,0]] z with z0=(1,0) -> z(t) = (cos t, -sin t);
    // flip the sign convention to match (cos 1, sin 1).
    const VelocityFn<double> g = [](const std::vector<double>& z, double, std::vector<double>& out) {
        out = {-z[1], z[0]};
    };
    IntegratorConfig cfg;
    auto res = integrate<double>(f, {1.0, 0.0}, cfg);
    CHECK(res.z[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-8));
    CHECK(res.z[1] == doctest::Approx(-std::sin(1.0)).epsilon(1e-8));
    auto res2 = integrate<double>(g, {1.0, 0.0}, cfg);
    CHECK(res2.z[1] == doctest::Approx(std::sin(1.0)).epsilon(1e-8));
}

TEST_CASE("halving the step reduces global error by roughly 32x") {
    auto err_at = [](int steps) {
        IntegratorConfig cfg;
        cfg.steps = steps;
        auto res = integrate<double>(kIdentity, {1.0}, cfg);
        return std::fabs(res.z[0] - std::exp(1.0));
    };
    // use coarse grids so the error stays well above the round-off floor
    for (int n : {4, 8, 16}) {
        const double ratio = err_at(n) / err_at(2 * n);
        CHECK(ratio > 24.0);
        CHECK(ratio < 40.0);
    }
}

TEST_CASE("empirical convergence order is 5 within 0.3") {
    auto err_at = [](int steps) {
        IntegratorConfig cfg;
        cfg.steps = steps;
        // smooth nonlinear field with closed form: dz/dt = z^2/(1+t),
        // z(0)=0.5 -> z(t) = 1/(2 - log(1+t))
        const VelocityFn<double> f = [](const std::vector<double>& z, double t, std::vector<double>& out) {
            out = {z[0] * z[0] / (1.0 + t)};
        };
        auto res = integrate<double>(f, {0.5}, cfg);
        return std::fabs(res.z[0] - 1.0 / (2.0 - std::log(2.0)));
    };
    const double e1 = err_at(4), e2 = err_at(8), e3 = err_at(16), e4 = err_at(32);
    for (double slope : {std::log2(e1 / e2), std::log2(e2 / e3), std::log2(e3 / e4)}) {
        CHECK(slope > 4.7);
        CHECK(slope < 5.3);
    }
}

TEST_CASE("rk4 fallback integrates and reports no error estimate") {
    IntegratorConfig cfg;
    cfg.method = OdeMethod::rk4;
    cfg.steps = 100;
    auto res = integrate<double>(kIdentity, {1.0}, cfg);
    CHECK(std::fabs(res.z[0] - std::exp(1.0)) < 1e-8);
    CHECK(res.rec.nfev == 400);
    for (double e : res.rec.err_norms) CHECK(e == 0.0);
    cfg.mode = OdeMode::adaptive;
    CHECK_THROWS_AS((integrate<double>(kIdentity, {1.0}, cfg)), ConfigError);
}

TEST_CASE("adaptive mode honors tolerances and reaches t=1") {
    IntegratorConfig cfg;
    cfg.mode = OdeMode::adaptive;
    cfg.steps = 50;  // initial h = 1/50
    cfg.rtol = 1e-9;
    cfg.atol = 1e-12;
    auto res = integrate<double>(kIdentity, {1.0}, cfg);
    CHECK(std::fabs(res.z[0] - std::exp(1.0)) < 1e-7);
    CHECK(res.rec.ts.back() == 1.0);
    // tighter tolerance costs more evaluations
    IntegratorConfig loose = cfg;
    loose.rtol = 1e-4;
    loose.atol = 1e-6;
    auto res2 = integrate<double>(kIdentity, {1.0}, loose);
    CHECK(res2.rec.nfev < res.rec.nfev);
}

TEST_CASE("integration is bit-identical across runs and stochastic-call free") {
    const VelocityFn<double> f = [](const std::vector<double>& z, double t, std::vector<double>& out) {
        out.resize(z.size());
        for (size_t i = 0; i < z.size(); ++i) out[i] = std::sin(z[i]) + t;
    };
    IntegratorConfig cfg;
    auto a = integrate<double>(f, {0.3, -1.2, 7.0}, cfg);
    auto b = integrate<double>(f, {0.3, -1.2, 7.0}, cfg);
    CHECK(a.z == b.z);
    CHECK(a.rec.err_norms == b.rec.err_norms);
}

TEST_CASE("polynomial velocity fields of degree <= 4 integrate exactly") {
    // dz/dt = t^4 -> z(1) = z0 + 1/5
    const VelocityFn<double> f = [](const std::vector<double>&, double t, std::vector<double>& out) {
        out = {t * t * t * t};
    };
    IntegratorConfig cfg;
    cfg.steps = 3;
    auto res = integrate<double>(f, {0.0}, cfg);
    CHECK(res.z[0] == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("non-finite initial state is rejected") {
    IntegratorConfig cfg;
    CHECK_THROWS_AS((integrate<double>(kZero, {std::numeric_limits<double>::infinity()}, cfg)),
                    NumericError);
}
