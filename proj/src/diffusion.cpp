#include "solodiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "solodiff/error.hpp"

namespace solodiff {

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}
std::string to_string(PredictionTarget mode) {
  return mode == PredictionTarget::epsilon ? "epsilon" : "x0";
}
std::string to_string(PosteriorVariance v) {
  return v == PosteriorVariance::beta_tilde ? "beta_tilde" : "beta";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ParameterError("unknown schedule kind '" + s + "'");
}
PredictionTarget prediction_target_from_string(const std::string& s) {
  if (s == "epsilon") return PredictionTarget::epsilon;
  if (s == "x0") return PredictionTarget::x0;
  throw ParameterError("unknown prediction target '" + s + "'");
}
PosteriorVariance posterior_variance_from_string(const std::string& s) {
  if (s == "beta_tilde") return PosteriorVariance::beta_tilde;
  if (s == "beta") return PosteriorVariance::beta;
  throw ParameterError("unknown posterior variance '" + s + "'");
}

double DiffusionSchedule::beta(int t) const {
  if (t < 1 || t > steps) {
    throw ParameterError("step " + std::to_string(t) + " outside [1, " + std::to_string(steps) +
                         "]");
  }
  return betas[static_cast<std::size_t>(t - 1)];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps) {
    throw ParameterError("step " + std::to_string(t) + " outside [0, " + std::to_string(steps) +
                         "]");
  }
  return alpha_bars[static_cast<std::size_t>(t - 1)];
}

void DiffusionSchedule::validate() const {
  if (steps < 1) throw ParameterError("schedule needs at least one step");
  if (betas.size() != static_cast<std::size_t>(steps) ||
      alpha_bars.size() != static_cast<std::size_t>(steps)) {
    throw ParameterError("schedule arrays do not have T entries");
  }
  double prev = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double b = betas[static_cast<std::size_t>(i)];
    const double a = alpha_bars[static_cast<std::size_t>(i)];
    if (!(b > 0.0 && b < 1.0)) throw ParameterError("beta outside (0, 1)");
    if (!(a > 0.0 && a < prev)) throw ParameterError("alpha_bar not strictly decreasing");
    prev = a;
  }
}

DiffusionSchedule build_schedule(ScheduleKind kind, int steps, double beta_start,
                                 double beta_end) {
  if (steps < 1) throw ParameterError("schedule needs T >= 1, got " + std::to_string(steps));
  DiffusionSchedule s;
  s.kind = kind;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::linear) {
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw ParameterError("linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      s.betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
  } else {
    constexpr double offset = 0.008;
    constexpr double max_beta = 0.999;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    for (int i = 1; i <= steps; ++i) {
      const double ratio = (f(i) / f0) / (f(i - 1) / f0);
      s.betas[static_cast<std::size_t>(i - 1)] = std::min(1.0 - ratio, max_beta);
    }
    s.beta_start = s.betas.front();
    s.beta_end = s.betas.back();
  }
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    prod *= 1.0 - s.betas[i];
    s.alpha_bars[i] = prod;
  }
  s.validate();
  return s;
}

Tensor noise_with_alpha_bar(const Tensor& x0, const Tensor& eps, double alpha_bar) {
  require_same_shape(x0, eps, "forward_diffuse");
  const float a = static_cast<float>(std::sqrt(alpha_bar));
  const float b = static_cast<float>(std::sqrt(1.0 - alpha_bar));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

NoisySample forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                            const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.steps) {
    throw ParameterError("forward_diffuse: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(sched.steps) + "]");
  }
  return NoisySample{noise_with_alpha_bar(x0, eps, sched.alpha_bar(t)), t, eps};
}

Tensor x0_from_epsilon(const Tensor& x_t, const Tensor& eps, int t,
                       const DiffusionSchedule& sched) {
  require_same_shape(x_t, eps, "x0_from_epsilon");
  const double abar = sched.alpha_bar(t);
  const float inv = static_cast<float>(1.0 / std::sqrt(abar));
  const float s = static_cast<float>(std::sqrt(1.0 - abar));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps[i]) * inv;
  return out;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_error");
  if (a.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double loss_epsilon(const Tensor& eps_true, const Tensor& eps_pred) {
  return mean_squared_error(eps_true, eps_pred);
}

double loss_x0(const Tensor& x0_true, const Tensor& x0_pred) {
  return mean_squared_error(x0_true, x0_pred);
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& prediction, PredictionTarget mode,
                    const DiffusionSchedule& sched, const Tensor& noise,
                    const SamplerOptions& opts) {
  if (t < 1 || t > sched.steps) {
    throw ParameterError("reverse_step: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(sched.steps) + "]");
  }
  require_same_shape(x_t, prediction, "reverse_step prediction");
  Tensor x0_hat = mode == PredictionTarget::x0 ? prediction
                                               : x0_from_epsilon(x_t, prediction, t, sched);
  if (opts.clamp_x0) {
    for (float& v : x0_hat.data()) v = std::clamp(v, -1.0f, 1.0f);
  }

  const double beta = sched.beta(t);
  const double abar = sched.alpha_bar(t);
  const double abar_prev = sched.alpha_bar(t - 1);
  const float c0 = static_cast<float>(std::sqrt(abar_prev) * beta / (1.0 - abar));
  const float ct = static_cast<float>(std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar));

  double variance = 0.0;
  if (t > 1) {
    variance = opts.variance == PosteriorVariance::beta_tilde
                   ? (1.0 - abar_prev) / (1.0 - abar) * beta
                   : beta;
  }
  const float sigma = static_cast<float>(std::sqrt(variance));

  Tensor out(x_t.shape());
  if (sigma > 0.0f) {
    require_same_shape(x_t, noise, "reverse_step noise");
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = c0 * x0_hat[i] + ct * x_t[i] + sigma * noise[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i];
  }
  return out;
}

Tensor denoise_from(Tensor x, int t_start, const DenoiseFn& fn, PredictionTarget mode,
                    const DiffusionSchedule& sched, RandomSource& rng,
                    const SamplerOptions& opts) {
  if (t_start < 1 || t_start > sched.steps) {
    throw ParameterError("denoise_from: start step " + std::to_string(t_start) +
                         " outside [1, " + std::to_string(sched.steps) + "]");
  }
  const Tensor no_noise;
  for (int t = t_start; t >= 1; --t) {
    Tensor prediction = fn(x, t);
    if (t > 1) {
      x = reverse_step(x, t, prediction, mode, sched, rng.normal_tensor(x.shape()), opts);
    } else {
      x = reverse_step(x, t, prediction, mode, sched, no_noise, opts);
    }
  }
  return x;
}

Tensor sample_loop(const DenoiseFn& fn, Shape shape, PredictionTarget mode,
                   const DiffusionSchedule& sched, RandomSource& rng,
                   const SamplerOptions& opts) {
  Tensor x_T = rng.normal_tensor(shape);
  return denoise_from(std::move(x_T), sched.steps, fn, mode, sched, rng, opts);
}

Tensor truncated_project(const Tensor& x, int t_corr, const DenoiseFn& fn, PredictionTarget mode,
                         const DiffusionSchedule& sched, RandomSource& rng,
                         const SamplerOptions& opts) {
  if (t_corr < 1 || t_corr > sched.steps) {
    throw ParameterError("truncated_project: t_corr " + std::to_string(t_corr) +
                         " outside [1, " + std::to_string(sched.steps) + "]");
  }
  Tensor eps = rng.normal_tensor(x.shape());
  NoisySample noisy = forward_diffuse(x, t_corr, eps, sched);
  return denoise_from(std::move(noisy.x_t), t_corr, fn, mode, sched, rng, opts);
}

}  // namespace solodiff
