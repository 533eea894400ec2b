#include "meshseq/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "meshseq/ops.hpp"

namespace meshseq {

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "linear") return ScheduleKind::Linear;
    if (name == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::Linear ? "linear" : "cosine";
}

ReverseNoise reverse_noise_from_string(const std::string& name) {
    if (name == "posterior") return ReverseNoise::Posterior;
    if (name == "beta") return ReverseNoise::Beta;
    throw ConfigError("unknown reverse noise variant '" + name + "'");
}

std::string to_string(ReverseNoise kind) { return kind == ReverseNoise::Posterior ? "posterior" : "beta"; }

double DiffusionSchedule::alpha(std::size_t t) const {
    if (t < 1 || t > n_steps())
        throw ConfigError("diffusion step " + std::to_string(t) + " outside [1, " +
                          std::to_string(n_steps()) + "]");
    return alphas[t - 1];
}

double DiffusionSchedule::alpha_bar(std::size_t t) const {
    if (t == 0) return 1.0;
    if (t > n_steps())
        throw ConfigError("diffusion step " + std::to_string(t) + " outside [0, " +
                          std::to_string(n_steps()) + "]");
    return alpha_bars[t - 1];
}

DiffusionSchedule schedule_from_alphas(std::vector<double> alphas) {
    if (alphas.empty()) throw ConfigError("schedule needs at least one step");
    DiffusionSchedule s;
    double running = 1.0;
    for (double a : alphas) {
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError("schedule alpha must lie in (0, 1]");
        running *= a;
        s.alpha_bars.push_back(running);
    }
    s.alphas = std::move(alphas);
    return s;
}

DiffusionSchedule make_schedule(std::size_t n_steps, ScheduleKind kind) {
    if (n_steps < 2) throw ConfigError("schedule needs at least 2 steps");
    constexpr double kMaxBeta = 0.999;
    const double T = static_cast<double>(n_steps);
    std::vector<double> alphas(n_steps);
    if (kind == ScheduleKind::Linear) {
        const double k = 1000.0 / T;
        const double lo = 1e-4 * k, hi = 0.02 * k;
        for (std::size_t i = 0; i < n_steps; ++i) {
            const double beta = lo + (hi - lo) * static_cast<double>(i) / (T - 1.0);
            alphas[i] = 1.0 - std::min(beta, kMaxBeta);
        }
    } else {
        constexpr double s = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (std::size_t i = 0; i < n_steps; ++i) {
            const double beta = 1.0 - f(static_cast<double>(i + 1)) / f(static_cast<double>(i));
            alphas[i] = 1.0 - std::clamp(beta, 0.0, kMaxBeta);
        }
    }
    DiffusionSchedule sched = schedule_from_alphas(std::move(alphas));
    sched.kind = kind;
    return sched;
}

Tensor forward_noise(const Tensor& x_prev, double alpha, const Tensor& eps) {
    if (x_prev.shape() != eps.shape())
        throw ShapeError("forward_noise: x " + shape_str(x_prev.shape()) + " vs noise " +
                         shape_str(eps.shape()));
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("forward_noise: alpha outside [0, 1]");
    return add(scale(eps, std::sqrt(1.0 - alpha)), scale(x_prev, std::sqrt(alpha)));
}

Tensor forward_noise_step(const Tensor& x_prev, std::size_t t, const DiffusionSchedule& schedule,
                          const Tensor& eps) {
    return forward_noise(x_prev, schedule.alpha(t), eps);
}

Tensor closed_form_noise(const Tensor& x0, std::size_t t, const DiffusionSchedule& schedule,
                         const Tensor& eps) {
    if (x0.shape() != eps.shape())
        throw ShapeError("closed_form_noise: x " + shape_str(x0.shape()) + " vs noise " +
                         shape_str(eps.shape()));
    const double ab = schedule.alpha_bar(t);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

ReverseCoefficients reverse_coefficients(std::size_t t, const DiffusionSchedule& schedule,
                                         ReverseNoise variant) {
    const double a = schedule.alpha(t);
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double denom = std::sqrt(1.0 - ab);
    ReverseCoefficients c;
    c.input_scale = 1.0 / std::sqrt(a);
    c.eps_scale = (1.0 - a) == 0.0 ? 0.0 : (1.0 - a) / denom;
    if (t > 1) {
        if (variant == ReverseNoise::Beta)
            c.noise_scale = std::sqrt(1.0 - a);
        else
            c.noise_scale = (1.0 - a) == 0.0 || (1.0 - ab_prev) == 0.0
                                ? 0.0
                                : std::sqrt(1.0 - a) * std::sqrt(1.0 - ab_prev) / denom;
    }
    return c;
}

Tensor reverse_step(const Tensor& z_t, std::size_t t, const Tensor& eps_pred,
                    const DiffusionSchedule& schedule, const Tensor& noise, ReverseNoise variant) {
    if (z_t.shape() != eps_pred.shape() || z_t.shape() != noise.shape())
        throw ShapeError("reverse_step: z " + shape_str(z_t.shape()) + ", eps " +
                         shape_str(eps_pred.shape()) + ", noise " + shape_str(noise.shape()) +
                         " must agree");
    const ReverseCoefficients c = reverse_coefficients(t, schedule, variant);
    Tensor out = scale(sub(z_t, scale(eps_pred, c.eps_scale)), c.input_scale);
    if (c.noise_scale != 0.0) out = add(out, scale(noise, c.noise_scale));
    return out;
}

}  // namespace meshseq
