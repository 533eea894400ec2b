#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "meshseq/tensor.hpp"

namespace meshseq {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind schedule_kind_from_string(const std::string& name);
std::string to_string(ScheduleKind kind);

// Noise coefficient used by reverse_step.
//   Posterior: sqrt(1 - a_t) * sqrt(1 - abar_{t-1}) / sqrt(1 - abar_t)
//   Beta:   sqrt(1 - a_t)
enum class ReverseNoise { Posterior, Beta };

ReverseNoise reverse_noise_from_string(const std::string& name);
std::string to_string(ReverseNoise kind);

// Steps are 1-based: alpha(t) for t in [1, n_steps]; alpha_bar(0) == 1.
struct DiffusionSchedule {
    ScheduleKind kind = ScheduleKind::Linear;
    std::vector<double> alphas;      // alphas[t - 1]
    std::vector<double> alpha_bars;  // alpha_bars[t - 1]

    std::size_t n_steps() const { return alphas.size(); }
    double alpha(std::size_t t) const;
    double alpha_bar(std::size_t t) const;
};

// linear: beta spaced evenly in [1e-4, 0.02] * (1000 / T_d).
// cosine: squared-cosine alpha_bar profile with offset 0.008.
// Both clip beta at 0.999.
DiffusionSchedule make_schedule(std::size_t n_steps, ScheduleKind kind = ScheduleKind::Linear);

// Arbitrary per-step alphas in (0, 1]; alpha_bar is their running product.
DiffusionSchedule schedule_from_alphas(std::vector<double> alphas);

// x_t = sqrt(1 - a) * eps + sqrt(a) * x_prev
Tensor forward_noise(const Tensor& x_prev, double alpha, const Tensor& eps);
Tensor forward_noise_step(const Tensor& x_prev, std::size_t t, const DiffusionSchedule& schedule,
                          const Tensor& eps);

// x_t drawn in one shot from q(x_t | x_0): sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
Tensor closed_form_noise(const Tensor& x0, std::size_t t, const DiffusionSchedule& schedule,
                         const Tensor& eps);

struct ReverseCoefficients {
    double input_scale = 1.0;  // 1 / sqrt(a_t)
    double eps_scale = 0.0;    // (1 - a_t) / sqrt(1 - abar_t), applied before input_scale
    double noise_scale = 0.0;
};

// 0/0 terms (a_t == 1 with abar_t == 1) evaluate to 0. noise_scale is 0 at t = 1.
ReverseCoefficients reverse_coefficients(std::size_t t, const DiffusionSchedule& schedule,
                                         ReverseNoise variant = ReverseNoise::Posterior);

// z_{t-1} = (z_t - eps_scale * eps_pred) / sqrt(a_t) + noise_scale * noise
Tensor reverse_step(const Tensor& z_t, std::size_t t, const Tensor& eps_pred,
                    const DiffusionSchedule& schedule, const Tensor& noise,
                    ReverseNoise variant = ReverseNoise::Posterior);

}  // namespace meshseq
