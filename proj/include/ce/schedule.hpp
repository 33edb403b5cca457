#pragma once

#include <cmath>
#include <vector>

#include "ce/tensor.hpp"

namespace ce {

// Forward-process tables. betas/alphas indexed 0..T-1 for steps 1..T;
// alpha_bar(t) follows the convention alpha_bar(0) = 1 exactly. Tables are
// kept in double so long cumulative products stay accurate.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;  // alpha_bars[t-1] = prod_{s<=t} alpha_s

    double alpha_bar(int t) const {
        check_arg(t >= 0 && t <= T, "alpha_bar: t out of range");
        return t == 0 ? 1.0 : alpha_bars[static_cast<size_t>(t - 1)];
    }
};

enum class ScheduleKind { linear };

inline NoiseSchedule build_schedule(int T, ScheduleKind kind = ScheduleKind::linear) {
    check_arg(T >= 1, "build_schedule: T must be >= 1");
    (void)kind;
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    const double beta_start = 1e-4, beta_end = 2e-2;
    double prod = 1.0;
    for (int i = 0; i < T; i++) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * i / (T - 1);
        s.betas[static_cast<size_t>(i)] = beta;
        s.alphas[static_cast<size_t>(i)] = 1.0 - beta;
        prod *= 1.0 - beta;
        s.alpha_bars[static_cast<size_t>(i)] = prod;
    }
    return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <class S>
TensorT<S> q_sample(const TensorT<S>& x0, int t, const TensorT<S>& eps,
                    const NoiseSchedule& s) {
    check_arg(t >= 0 && t <= s.T, "q_sample: t out of range");
    check_arg(x0.same_shape(eps), "q_sample: shape mismatch");
    double ab = s.alpha_bar(t);
    S ca = static_cast<S>(std::sqrt(ab));
    S cb = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out = x0;
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = ca * x0.data[i] + cb * eps.data[i];
    return out;
}

// Deterministic (eta = 0) update coefficients: x_prev = a * x_t + b * eps.
struct DdimCoeffs {
    double a, b;
};

inline DdimCoeffs ddim_coeffs(int t, int t_prev, const NoiseSchedule& s) {
    check_arg(t_prev >= 0 && t_prev < t && t <= s.T, "ddim: need 0 <= t_prev < t <= T");
    double ab_t = s.alpha_bar(t);
    double ab_p = s.alpha_bar(t_prev);
    double a = std::sqrt(ab_p / ab_t);
    double b = std::sqrt(1.0 - ab_p) - std::sqrt(ab_p * (1.0 - ab_t) / ab_t);
    return {a, b};
}

template <class S>
TensorT<S> ddim_step(const TensorT<S>& x_t, const TensorT<S>& eps_pred, int t,
                     int t_prev, const NoiseSchedule& s) {
    check_arg(x_t.same_shape(eps_pred), "ddim_step: shape mismatch");
    DdimCoeffs c = ddim_coeffs(t, t_prev, s);
    TensorT<S> out = x_t;
    S a = static_cast<S>(c.a), b = static_cast<S>(c.b);
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = a * x_t.data[i] + b * eps_pred.data[i];
    return out;
}

// Inverse direction, from t_from up to t_to: same closed form with the roles
// of the endpoints exchanged.
template <class S>
TensorT<S> ddim_invert_step(const TensorT<S>& x_t, const TensorT<S>& eps_pred,
                            int t_from, int t_to, const NoiseSchedule& s) {
    check_arg(t_from >= 0 && t_from < t_to && t_to <= s.T,
              "ddim_invert_step: need 0 <= t_from < t_to <= T");
    check_arg(x_t.same_shape(eps_pred), "ddim_invert_step: shape mismatch");
    double ab_f = s.alpha_bar(t_from);
    double ab_t = s.alpha_bar(t_to);
    S a = static_cast<S>(std::sqrt(ab_t / ab_f));
    S b = static_cast<S>(std::sqrt(1.0 - ab_t) - std::sqrt(ab_t * (1.0 - ab_f) / ab_f));
    TensorT<S> out = x_t;
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = a * x_t.data[i] + b * eps_pred.data[i];
    return out;
}

// Classifier-free guidance. The endpoints are exact so scale 1 and 0 return
// the corresponding input bit for bit.
template <class S>
TensorT<S> cfg_combine(const TensorT<S>& eps_uncond, const TensorT<S>& eps_cond,
                       S scale) {
    check_arg(eps_uncond.same_shape(eps_cond), "cfg_combine: shape mismatch");
    if (scale == S(1)) return eps_cond;
    if (scale == S(0)) return eps_uncond;
    TensorT<S> out = eps_uncond;
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = eps_uncond.data[i] + scale * (eps_cond.data[i] - eps_uncond.data[i]);
    return out;
}

// Uniformly spaced inference timesteps, descending from T to 0 inclusive
// (steps + 1 entries). steps must divide into T evenly enough to subsample;
// we use round(k * T / steps) which is exact when steps divides T.
inline std::vector<int> inference_timesteps(int steps, int T) {
    check_arg(steps >= 1 && steps <= T, "inference steps must be in [1, T]");
    std::vector<int> ts(static_cast<size_t>(steps) + 1);
    for (int k = 0; k <= steps; k++)
        ts[static_cast<size_t>(k)] =
            static_cast<int>(std::lround(static_cast<double>(T) * (steps - k) / steps));
    return ts;
}

}  // namespace ce
