#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vsr/errors.hpp"

namespace vsr {

enum class OdeMethod { dopri5, rk4 };
enum class OdeMode { fixed, adaptive };

struct IntegratorConfig {
    OdeMethod method = OdeMethod::dopri5;
    OdeMode mode = OdeMode::fixed;
    int steps = 100;         // fixed mode: exact uniform step count
    double rtol = 1e-5;      // adaptive mode only
    double atol = 1e-6;      // adaptive mode only

    void validate() const {
        if (steps < 1) throw ConfigError("integrator: step count must be >= 1");
        if (mode == OdeMode::adaptive && (rtol <= 0 || atol <= 0))
            throw ConfigError("integrator: adaptive tolerances must be positive");
    }
};

inline OdeMethod ode_method_from(const std::string& s) {
    if (s == "dopri5") return OdeMethod::dopri5;
    if (s == "rk4") return OdeMethod::rk4;
    throw ConfigError("integrator: unknown method '" + s + "' (expected dopri5 or rk4)");
}

inline OdeMode ode_mode_from(const std::string& s) {
    if (s == "fixed") return OdeMode::fixed;
    if (s == "adaptive") return OdeMode::adaptive;
    throw ConfigError("integrator: unknown mode '" + s + "' (expected fixed or adaptive)");
}

struct TrajectoryRecord {
    std::vector<double> ts;          // visited times, 0 .. 1, strictly increasing
    std::vector<double> err_norms;   // embedded-estimate RMS per accepted step
    size_t nfev = 0;
    double max_err = 0.0;
    double cond_drift = 0.0;         // filled by inference when applicable
};

// dz/dt = f(z, t); f writes its value into `out` (same length as z).
template <typename T>
using VelocityFn = std::function<void(const std::vector<T>&, T, std::vector<T>&)>;

namespace detail {

// Dormand–Prince 5(4) tableau.
inline constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// 5th-order advance (equals the 7th tableau row: FSAL).
inline constexpr double kB5[7] = {35.0 / 384,      0.0,       500.0 / 1113, 125.0 / 192,
                                  -2187.0 / 6784, 11.0 / 84, 0.0};
// b5 - b4: embedded 4th-order error-estimate weights.
inline constexpr double kE[7] = {71.0 / 57600,        0.0,         -71.0 / 16695, 71.0 / 1920,
                                 -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

template <typename T>
void check_velocity_finite(const std::vector<T>& k, double t) {
    for (T v : k)
        if (!std::isfinite(double(v)))
            throw NumericError("integration: non-finite velocity at t = " + std::to_string(t));
}

}  // namespace detail

// Scratch buffers reused across steps of one trajectory.
template <typename T>
struct Dopri5Workspace {
    std::vector<T> k[7];
    std::vector<T> ytmp;
    void resize(size_t n) {
        for (auto& v : k) v.resize(n);
        ytmp.resize(n);
    }
};

// One Dormand–Prince step from (z, t) with step h. k1 = f(z, t) must be
// provided (FSAL hands it down between steps); k[6] of the result is
// f(z_next, t + h), reusable as the next step's k1. Returns the RMS of the
// embedded 4th-order error estimate.
template <typename T>
T dopri5_step_core(const VelocityFn<T>& f, const std::vector<T>& z, T t, T h,
                   Dopri5Workspace<T>& w, std::vector<T>& z_next, size_t& nfev) {
    const size_t n = z.size();
    using detail::kA;
    using detail::kB5;
    using detail::kC;
    using detail::kE;
    for (int s = 1; s < 7; ++s) {
        for (size_t i = 0; i < n; ++i) {
            T acc = T(0);
            for (int j = 0; j < s; ++j) acc += T(kA[s][j]) * w.k[j][i];
            w.ytmp[i] = z[i] + h * acc;
        }
        // stage 7 evaluates at the advanced point itself (FSAL)
        f(w.ytmp, t + T(kC[s]) * h, w.k[s]);
        ++nfev;
        detail::check_velocity_finite(w.k[s], double(t) + kC[s] * double(h));
        if (s == 6) z_next = w.ytmp;
    }
    T err2 = T(0);
    for (size_t i = 0; i < n; ++i) {
        T e = T(0);
        for (int j = 0; j < 7; ++j) e += T(kE[j]) * w.k[j][i];
        e *= h;
        err2 += e * e;
    }
    (void)kB5;  // the advance itself is the stage-7 ytmp (row 7 == b5)
    return std::sqrt(err2 / T(n));
}

// Convenience single-step form matching the operation contract.
template <typename T>
std::pair<std::vector<T>, T> dopri5_step(const VelocityFn<T>& f, const std::vector<T>& z, T t, T h) {
    if (!(h > T(0))) throw RangeError("dopri5_step: h must be positive");
    if (t < T(0) || double(t) + double(h) > 1.0 + 1e-12)
        throw RangeError("dopri5_step: [t, t+h] must lie inside [0, 1]");
    Dopri5Workspace<T> w;
    w.resize(z.size());
    f(z, t, w.k[0]);
    detail::check_velocity_finite(w.k[0], double(t));
    size_t nfev = 1;
    std::vector<T> z_next;
    const T err = dopri5_step_core(f, z, t, h, w, z_next, nfev);
    return {std::move(z_next), err};
}

template <typename T>
struct IntegrateResult {
    std::vector<T> z;
    TrajectoryRecord rec;
};

namespace detail {

template <typename T>
IntegrateResult<T> integrate_fixed_dopri5(const VelocityFn<T>& f, std::vector<T> z,
                                          const IntegratorConfig& cfg) {
    const int N = cfg.steps;
    IntegrateResult<T> out;
    out.rec.ts.reserve(size_t(N) + 1);
    out.rec.ts.push_back(0.0);
    Dopri5Workspace<T> w;
    w.resize(z.size());
    f(z, T(0), w.k[0]);
    out.rec.nfev = 1;
    check_velocity_finite(w.k[0], 0.0);
    std::vector<T> z_next(z.size());
    for (int kstep = 0; kstep < N; ++kstep) {
        const T t0 = T(kstep) / T(N);
        const T t1 = (kstep + 1 == N) ? T(1) : T(kstep + 1) / T(N);
        const T h = t1 - t0;
        const T err = dopri5_step_core(f, z, t0, h, w, z_next, out.rec.nfev);
        z.swap(z_next);
        w.k[0].swap(w.k[6]);  // FSAL
        out.rec.ts.push_back(double(t1));
        out.rec.err_norms.push_back(double(err));
        out.rec.max_err = std::max(out.rec.max_err, double(err));
    }
    out.z = std::move(z);
    return out;
}

template <typename T>
IntegrateResult<T> integrate_fixed_rk4(const VelocityFn<T>& f, std::vector<T> z,
                                       const IntegratorConfig& cfg) {
    const int N = cfg.steps;
    const size_t n = z.size();
    IntegrateResult<T> out;
    out.rec.ts.push_back(0.0);
    std::vector<T> k1(n), k2(n), k3(n), k4(n), ytmp(n);
    for (int kstep = 0; kstep < N; ++kstep) {
        const T t0 = T(kstep) / T(N);
        const T t1 = (kstep + 1 == N) ? T(1) : T(kstep + 1) / T(N);
        const T h = t1 - t0;
        f(z, t0, k1);
        for (size_t i = 0; i < n; ++i) ytmp[i] = z[i] + h / T(2) * k1[i];
        f(ytmp, t0 + h / T(2), k2);
        for (size_t i = 0; i < n; ++i) ytmp[i] = z[i] + h / T(2) * k2[i];
        f(ytmp, t0 + h / T(2), k3);
        for (size_t i = 0; i < n; ++i) ytmp[i] = z[i] + h * k3[i];
        f(ytmp, t1, k4);
        out.rec.nfev += 4;
        check_velocity_finite(k4, double(t1));
        for (size_t i = 0; i < n; ++i)
            z[i] += h / T(6) * (k1[i] + T(2) * k2[i] + T(2) * k3[i] + k4[i]);
        out.rec.ts.push_back(double(t1));
        out.rec.err_norms.push_back(0.0);  // no embedded estimate
    }
    out.z = std::move(z);
    return out;
}

template <typename T>
IntegrateResult<T> integrate_adaptive_dopri5(const VelocityFn<T>& f, std::vector<T> z,
                                             const IntegratorConfig& cfg) {
    const size_t n = z.size();
    IntegrateResult<T> out;
    out.rec.ts.push_back(0.0);
    Dopri5Workspace<T> w;
    w.resize(n);
    f(z, T(0), w.k[0]);
    out.rec.nfev = 1;
    check_velocity_finite(w.k[0], 0.0);

    // Hairer-style PI controller.
    const double safety = 0.9, facmin = 0.2, facmax = 10.0;
    const double beta = 0.04, alpha = 0.2 - 0.75 * beta;
    double facold = 1e-4;
    double t = 0.0;
    double h = 1.0 / cfg.steps;
    const size_t max_attempts = size_t(cfg.steps) * 10;
    size_t attempts = 0;
    std::vector<T> z_next(n);
    while (t < 1.0) {
        if (++attempts > max_attempts)
            throw NumericError("integration: adaptive solver exceeded 10x step budget at t = " +
                               std::to_string(t));
        h = std::min(h, 1.0 - t);
        const T err_rms = dopri5_step_core(f, z, T(t), T(h), w, z_next, out.rec.nfev);
        // scaled error against atol + rtol * max(|z|, |z_next|)
        double scaled2 = 0.0;
        {
            double e2 = 0.0;
            for (size_t i = 0; i < n; ++i) {
                T e = T(0);
                for (int j = 0; j < 7; ++j) e += T(detail::kE[j]) * w.k[j][i];
                e *= T(h);
                const double sc =
                    cfg.atol + cfg.rtol * std::max(std::fabs(double(z[i])), std::fabs(double(z_next[i])));
                e2 += (double(e) / sc) * (double(e) / sc);
            }
            scaled2 = e2 / double(n);
        }
        const double err = std::sqrt(scaled2);
        const double fac = std::pow(std::max(err, 1e-16), alpha) / std::pow(facold, beta);
        double hnew = h * std::min(facmax, std::max(facmin, safety / fac));
        if (err <= 1.0) {
            t = (1.0 - t - h < 1e-14) ? 1.0 : t + h;
            z.swap(z_next);
            w.k[0].swap(w.k[6]);
            out.rec.ts.push_back(t);
            out.rec.err_norms.push_back(double(err_rms));
            out.rec.max_err = std::max(out.rec.max_err, double(err_rms));
            facold = std::max(err, 1e-4);
        } else {
            hnew = h * std::min(1.0, std::max(facmin, safety / fac));  // no growth after rejection
        }
        h = hnew;
        if (h < 1e-14) throw NumericError("integration: step size underflow at t = " + std::to_string(t));
    }
    out.z = std::move(z);
    return out;
}

}  // namespace detail

template <typename T>
IntegrateResult<T> integrate(const VelocityFn<T>& f, std::vector<T> z0, const IntegratorConfig& cfg) {
    cfg.validate();
    for (T v : z0)
        if (!std::isfinite(double(v))) throw NumericError("integration: initial state is not finite");
    if (cfg.method == OdeMethod::rk4) {
        if (cfg.mode == OdeMode::adaptive)
            throw ConfigError("integrator: adaptive mode requires dopri5 (rk4 has no error estimate)");
        return detail::integrate_fixed_rk4(f, std::move(z0), cfg);
    }
    if (cfg.mode == OdeMode::fixed) return detail::integrate_fixed_dopri5(f, std::move(z0), cfg);
    return detail::integrate_adaptive_dopri5(f, std::move(z0), cfg);
}

}  // namespace vsr
