#include "solodiff/evaluation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>

#include "solodiff/diffusion.hpp"
#include "solodiff/error.hpp"

namespace solodiff {

double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0.0)) throw ParameterError("PSNR peak must be positive");
  if (mse < 0.0 || !std::isfinite(mse)) throw ParameterError("MSE must be finite and >= 0");
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  return psnr_from_mse(mean_squared_error(a, b), peak);
}

VideoClip subsample_speed(const VideoClip& video, int speed, int start, int n) {
  if (speed < 1) throw ParameterError("speed must be >= 1");
  if (n < 1) throw ParameterError("frame count must be >= 1");
  const long last = static_cast<long>(start) + static_cast<long>(n - 1) * speed;
  if (start < 0 || last >= static_cast<long>(video.size())) {
    throw ParameterError("subsampling frames " + std::to_string(start) + ".." +
                         std::to_string(last) + " out of a " + std::to_string(video.size()) +
                         "-frame video");
  }
  VideoClip out;
  for (int i = 0; i < n; ++i) {
    const auto src = static_cast<std::size_t>(start + i * speed);
    out.frames.push_back(video.frames[src]);
    out.indices.push_back(video.indices.empty() ? static_cast<int>(src) : video.indices[src]);
  }
  return out;
}

std::vector<BenchmarkRecord> frame_prediction_benchmark(const VideoClip& video,
                                                        const TrainFn& train_fn, int n, int speed,
                                                        int k, int trials, RandomSource& rng,
                                                        int max_test) {
  video.validate();
  if (!train_fn) throw ParameterError("benchmark needs a training function");
  if (n < 1 || trials < 1 || k == 0 || max_test < 1) {
    throw ParameterError("benchmark needs n >= 1, trials >= 1, k != 0 and max_test >= 1");
  }
  if (video.empty()) throw ConfigError("benchmark video is empty");
  const int available = (static_cast<int>(video.size()) - 1) / std::max(speed, 1) + 1;
  const VideoClip sub = subsample_speed(video, speed, 0, available);
  const int len = static_cast<int>(sub.size());
  if (n >= len) {
    throw ConfigError("training window of " + std::to_string(n) + " frames leaves no held-out " +
                      "frames in a " + std::to_string(len) + "-frame video at speed " +
                      std::to_string(speed));
  }

  std::vector<BenchmarkRecord> records;
  for (int trial = 0; trial < trials; ++trial) {
    RandomSource trial_rng = rng.fork();
    const std::uint64_t seed = trial_rng.seed();
    const int w = trial_rng.uniform_int(0, len - n);
    const auto in_window = [&](int i) { return i >= w && i < w + n; };
    std::vector<int> candidates;
    for (int i = 0; i < len; ++i) {
      const int j = i + k;
      if (!in_window(i) && j >= 0 && j < len && !in_window(j)) candidates.push_back(i);
    }
    if (candidates.empty()) {
      throw ConfigError("no held-out frame pairs with gap " + std::to_string(k) +
                        " outside training window [" + std::to_string(w) + ", " +
                        std::to_string(w + n) + ")");
    }
    if (static_cast<int>(candidates.size()) > max_test) {
      for (int i = 0; i < max_test; ++i) {
        const int j = trial_rng.uniform_int(i, static_cast<int>(candidates.size()) - 1);
        std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
      }
      candidates.resize(static_cast<std::size_t>(max_test));
      std::sort(candidates.begin(), candidates.end());
    }

    VideoClip window = subsample_speed(sub, 1, w, n);
    FramePredictor predict = train_fn(window, trial_rng);
    double model_sum = 0.0;
    double base_sum = 0.0;
    for (int i : candidates) {
      const Tensor& current = sub[static_cast<std::size_t>(i)];
      const Tensor& truth = sub[static_cast<std::size_t>(i + k)];
      const Tensor guess = predict(current, k, trial_rng);
      model_sum += psnr(guess, truth);
      base_sum += psnr(current, truth);
    }
    BenchmarkRecord rec;
    rec.n_train = n;
    rec.speed = speed;
    rec.frame_gap = k;
    rec.psnr_model = model_sum / static_cast<double>(candidates.size());
    rec.psnr_baseline = base_sum / static_cast<double>(candidates.size());
    rec.run_seed = seed;
    rec.trial = trial;
    rec.window_start = w;
    rec.test_frames = static_cast<int>(candidates.size());
    records.push_back(rec);
  }
  return records;
}

double singan_diversity(const std::vector<VideoClip>& samples, const VideoClip& reference) {
  if (samples.size() < 2) throw ParameterError("SinGAN diversity needs at least two samples");
  reference.validate();
  if (reference.empty()) throw ParameterError("reference video is empty");
  const VideoClip& first = samples.front();
  for (const VideoClip& s : samples) {
    s.validate();
    if (s.empty() || s.size() != first.size() || s.frame_shape() != first.frame_shape()) {
      throw ParameterError("all samples must share one non-empty video shape");
    }
  }

  const int channels = reference.frame_shape().channels;
  if (first.frame_shape().channels != channels) {
    throw ParameterError("samples and reference differ in channel count");
  }
  const double m = static_cast<double>(samples.size());
  const std::size_t plane = first.frame_shape().plane();
  // each channel is normalized by its own reference spread; channels that are
  // constant in the reference carry no scale and are skipped
  double ratio_sum = 0.0;
  int used = 0;
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const Tensor& f : reference.frames) {
      for (float v : std::span<const float>(f.plane(c), f.shape().plane())) {
        sum += v;
        sq += static_cast<double>(v) * v;
        ++n;
      }
    }
    const double mu = sum / static_cast<double>(n);
    const double ref_var = std::max(0.0, sq / static_cast<double>(n) - mu * mu);
    if (ref_var <= 0.0) continue;

    double std_sum = 0.0;
    for (std::size_t f = 0; f < first.size(); ++f) {
      for (std::size_t i = static_cast<std::size_t>(c) * plane; i < (c + 1) * plane; ++i) {
        double mean = 0.0;
        for (const VideoClip& s : samples) mean += s[f][i];
        mean /= m;
        double var = 0.0;
        for (const VideoClip& s : samples) {
          const double d = s[f][i] - mean;
          var += d * d;
        }
        std_sum += std::sqrt(var / m);
      }
    }
    ratio_sum += std_sum / static_cast<double>(first.size() * plane) / std::sqrt(ref_var);
    ++used;
  }
  if (used == 0) throw ParameterError("SinGAN diversity is undefined for a constant reference video");
  return ratio_sum / used;
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& activations) {
  if (activations.rows() < 2 || activations.cols() < 1) {
    throw ParameterError("Gaussian fit needs at least two observations");
  }
  GaussianStats g;
  g.mean = activations.colwise().mean().transpose();
  const Eigen::MatrixXd centered = activations.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(activations.rows() - 1);
  return g;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() ||
      b.cov.rows() != b.mean.size() || a.cov.cols() != a.cov.rows() ||
      b.cov.cols() != b.cov.rows()) {
    throw ParameterError("Gaussian statistics have mismatched dimensions");
  }
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

std::optional<double> svfid(const VideoClip& generated, const VideoClip& reference,
                            const FeatureFn& features) {
  if (!features) return std::nullopt;
  const GaussianStats g = fit_gaussian(features(generated));
  const GaussianStats r = fit_gaussian(features(reference));
  return frechet_distance(g, r);
}

Eigen::MatrixXd load_activations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open activation file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw InputError(path + ":" + std::to_string(lineno) + ": non-numeric activation value");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InputError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(rows.front().size()) + " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("activation file '" + path + "' has no rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

DiversityReport diversity_report(const std::vector<VideoClip>& samples, const VideoClip& reference,
                                 const FeatureFn& features) {
  if (samples.empty()) throw ParameterError("diversity report needs at least one sample");
  DiversityReport rep;
  double fid_sum = 0.0;
  for (const VideoClip& s : samples) {
    const NNField f = compute_nnf(s, reference);
    rep.nnfdiv += nnfdiv(f);
    rep.nnfdist += nnfdist(f);
    if (features) fid_sum += *svfid(s, reference, features);
  }
  const double m = static_cast<double>(samples.size());
  rep.nnfdiv /= m;
  rep.nnfdist /= m;
  if (samples.size() >= 2) rep.singan_div = singan_diversity(samples, reference);
  if (features) rep.svfid = fid_sum / m;
  return rep;
}

}  // namespace solodiff
