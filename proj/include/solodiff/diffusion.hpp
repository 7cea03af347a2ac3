#pragma once

#include <functional>
#include <string>
#include <vector>

#include "solodiff/random.hpp"
#include "solodiff/tensor.hpp"

namespace solodiff {

enum class ScheduleKind { linear, cosine };
enum class PredictionTarget { epsilon, x0 };

/// Variance of the injected reverse-process noise.
enum class PosteriorVariance {
  beta_tilde,  ///< (1 - abar_{t-1}) / (1 - abar_t) * beta_t
  beta,        ///< beta_t
};

std::string to_string(ScheduleKind kind);
std::string to_string(PredictionTarget mode);
std::string to_string(PosteriorVariance v);
ScheduleKind schedule_kind_from_string(const std::string& s);
PredictionTarget prediction_target_from_string(const std::string& s);
PosteriorVariance posterior_variance_from_string(const std::string& s);

/// Noise schedule over steps t = 1..T. Storage is 0-based: `betas[t-1]` is
/// beta_t and `alpha_bars[t-1]` is abar_t = prod_{s<=t} (1 - beta_s).
struct DiffusionSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  /// beta_t for t in [1, T].
  double beta(int t) const;
  /// abar_t for t in [0, T]; abar_0 == 1.
  double alpha_bar(int t) const;
  void validate() const;
};

/// Linear betas are evenly spaced from beta_start to beta_end inclusive. The
/// cosine schedule ignores the endpoints: abar(t) = f(t)/f(0) with
/// f(t) = cos^2(((t/T) + 0.008) / 1.008 * pi/2), betas clipped at 0.999.
DiffusionSchedule build_schedule(ScheduleKind kind, int steps, double beta_start = 2e-3,
                                 double beta_end = 0.4);

struct NoisySample {
  Tensor x_t;
  int t = 0;
  Tensor eps;
};

/// x_t = sqrt(abar) * x0 + sqrt(1 - abar) * eps for an explicit abar.
Tensor noise_with_alpha_bar(const Tensor& x0, const Tensor& eps, double alpha_bar);

NoisySample forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                            const DiffusionSchedule& sched);

/// Inverts the forward process: (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Tensor x0_from_epsilon(const Tensor& x_t, const Tensor& eps, int t,
                       const DiffusionSchedule& sched);

double mean_squared_error(const Tensor& a, const Tensor& b);
double loss_epsilon(const Tensor& eps_true, const Tensor& eps_pred);
double loss_x0(const Tensor& x0_true, const Tensor& x0_pred);

struct SamplerOptions {
  PosteriorVariance variance = PosteriorVariance::beta_tilde;
  /// Clamp the clean-image estimate to [-1, 1] before the posterior.
  bool clamp_x0 = true;
};

/// One ancestral step x_t -> x_{t-1}: posterior mean at the (clamped) clean
/// estimate plus sigma_t * noise; sigma_1 = 0.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& prediction, PredictionTarget mode,
                    const DiffusionSchedule& sched, const Tensor& noise,
                    const SamplerOptions& opts = {});

/// Network callback: (x_t, t) -> prediction in the model's target space.
using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;

/// Runs reverse steps t = t_start .. 1 starting from x_{t_start}.
Tensor denoise_from(Tensor x, int t_start, const DenoiseFn& fn, PredictionTarget mode,
                    const DiffusionSchedule& sched, RandomSource& rng,
                    const SamplerOptions& opts = {});

/// Draws x_T ~ N(0, I) of `shape` and denoises it down to x_0.
Tensor sample_loop(const DenoiseFn& fn, Shape shape, PredictionTarget mode,
                   const DiffusionSchedule& sched, RandomSource& rng,
                   const SamplerOptions& opts = {});

/// Noises `x` to step t_corr with fresh noise, then denoises t_corr steps.
Tensor truncated_project(const Tensor& x, int t_corr, const DenoiseFn& fn, PredictionTarget mode,
                         const DiffusionSchedule& sched, RandomSource& rng,
                         const SamplerOptions& opts = {});

}  // namespace solodiff
