#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "magicstyle/errors.hpp"
#include "magicstyle/latent.hpp"

namespace magicstyle {

// Timesteps are 1-based indices into the training schedule. Timestep 0 is the
// clean sample, with alpha_bar(0) == 1.
using Timestep = std::uint32_t;

class NoiseSchedule {
public:
    NoiseSchedule() = default;

    // Scaled-linear spacing: sqrt(beta) is linear between the endpoints.
    static NoiseSchedule scaled_linear(std::uint32_t n_train, double beta_start, double beta_end) {
        if (n_train < 1) throw ParameterError("n_train must be >= 1");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
            throw ParameterError("beta range must satisfy 0 < beta_start <= beta_end < 1, got [" +
                                 std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
        }
        NoiseSchedule s;
        s.betas_.resize(n_train);
        s.alphas_.resize(n_train);
        s.alpha_bars_.resize(n_train);
        const double lo = std::sqrt(beta_start);
        const double hi = std::sqrt(beta_end);
        double running = 1.0;
        for (std::uint32_t i = 0; i < n_train; ++i) {
            const double frac = n_train == 1 ? 0.0 : static_cast<double>(i) / (n_train - 1);
            const double root = lo + frac * (hi - lo);
            // Endpoints exact; squaring the square root can drift by an ulp.
            s.betas_[i] = i == 0 ? beta_start : i + 1 == n_train ? beta_end : root * root;
            s.alphas_[i] = 1.0 - s.betas_[i];
            running *= s.alphas_[i];
            s.alpha_bars_[i] = running;
        }
        return s;
    }

    std::uint32_t num_train_steps() const { return static_cast<std::uint32_t>(betas_.size()); }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    double alpha_bar(Timestep t) const {
        if (t == 0) return 1.0;
        check_timestep(t);
        return alpha_bars_[t - 1];
    }

    void check_timestep(Timestep t) const {
        if (t < 1 || t > num_train_steps()) {
            throw ParameterError("timestep " + std::to_string(t) + " outside [1, " +
                                 std::to_string(num_train_steps()) + "]");
        }
    }

private:
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

struct ScheduleDefaults {
    static constexpr std::uint32_t n_train = 1000;
    static constexpr double beta_start = 0.00085;
    static constexpr double beta_end = 0.012;
};

inline NoiseSchedule build_schedule(std::uint32_t n_train = ScheduleDefaults::n_train,
                                    double beta_start = ScheduleDefaults::beta_start,
                                    double beta_end = ScheduleDefaults::beta_end) {
    return NoiseSchedule::scaled_linear(n_train, beta_start, beta_end);
}

struct ScheduleSpec {
    std::uint32_t n_train = ScheduleDefaults::n_train;
    double beta_start = ScheduleDefaults::beta_start;
    double beta_end = ScheduleDefaults::beta_end;

    NoiseSchedule build() const { return build_schedule(n_train, beta_start, beta_end); }
};

// Inference timesteps, strictly decreasing. Forward sampling walks them front
// to back; inversion walks them back to front.
struct TimestepPlan {
    std::vector<Timestep> steps;

    std::size_t size() const { return steps.size(); }

    std::vector<Timestep> ascending() const { return {steps.rbegin(), steps.rend()}; }
};

// Leading spacing: step k lands on k * (n_train / s) + 1.
inline TimestepPlan plan_timesteps(const NoiseSchedule& schedule, std::uint32_t s) {
    const std::uint32_t n = schedule.num_train_steps();
    if (s < 1 || s > n) {
        throw ParameterError("inference steps must be in [1, " + std::to_string(n) + "], got " +
                             std::to_string(s));
    }
    const std::uint32_t stride = n / s;
    TimestepPlan plan;
    plan.steps.reserve(s);
    for (std::uint32_t k = s; k-- > 0;) plan.steps.push_back(k * stride + 1);
    return plan;
}

inline Latent marginal_noise(const Latent& x0, Timestep t, const Latent& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "marginal_noise");
    schedule.check_timestep(t);
    const double ab = schedule.alpha_bar(t);
    return axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

inline Latent predict_x0(const Latent& x_t, const Latent& eps_pred, Timestep t, const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_pred, "predict_x0");
    const double ab = schedule.alpha_bar(t);
    const double inv = 1.0 / std::sqrt(ab);
    return axpby(inv, x_t, -std::sqrt(1.0 - ab) * inv, eps_pred);
}

namespace detail {

// Moves a sample from noise level `from` to `to` along the eta = 0 DDIM path.
inline Latent ddim_transfer(const Latent& x, const Latent& eps, Timestep from, Timestep to,
                            const NoiseSchedule& schedule) {
    const Latent x0 = predict_x0(x, eps, from, schedule);
    const double ab_to = schedule.alpha_bar(to);
    return axpby(std::sqrt(ab_to), x0, std::sqrt(1.0 - ab_to), eps);
}

}  // namespace detail

inline Latent ddim_denoise_step(const Latent& x_t, const Latent& eps_pred, Timestep t, Timestep t_prev,
                                const NoiseSchedule& schedule) {
    if (t_prev >= t) {
        throw ParameterError("denoise step requires t_prev < t, got t=" + std::to_string(t) +
                             " t_prev=" + std::to_string(t_prev));
    }
    return detail::ddim_transfer(x_t, eps_pred, t, t_prev, schedule);
}

inline Latent ddim_invert_step(const Latent& x_t, const Latent& eps_pred, Timestep t, Timestep t_next,
                               const NoiseSchedule& schedule) {
    if (t_next <= t) {
        throw ParameterError("inversion step requires t_next > t, got t=" + std::to_string(t) +
                             " t_next=" + std::to_string(t_next));
    }
    return detail::ddim_transfer(x_t, eps_pred, t, t_next, schedule);
}

}  // namespace magicstyle
