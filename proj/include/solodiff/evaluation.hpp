#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "solodiff/nnf.hpp"
#include "solodiff/random.hpp"
#include "solodiff/tensor.hpp"

namespace solodiff {

/// Value returned by psnr() for identical inputs.
inline constexpr double kPsnrCap = 100.0;
/// Peak-to-peak range of normalized [-1, 1] tensors.
inline constexpr double kNormalizedPeak = 2.0;

/// 10 log10(peak^2 / MSE), or kPsnrCap when MSE == 0.
double psnr(const Tensor& a, const Tensor& b, double peak = kNormalizedPeak);
double psnr_from_mse(double mse, double peak);

/// Frames start, start+S, ..., start+(n-1)S.
VideoClip subsample_speed(const VideoClip& video, int speed, int start, int n);

struct BenchmarkRecord {
  int n_train = 0;
  int speed = 1;
  int frame_gap = 1;
  double psnr_model = 0.0;
  double psnr_baseline = 0.0;
  std::uint64_t run_seed = 0;
  int trial = 0;
  /// First training frame, as an index into the speed-subsampled video.
  int window_start = 0;
  int test_frames = 0;
};

/// Predicts frame i+k from frame i.
using FramePredictor = std::function<Tensor(const Tensor& current, int k, RandomSource& rng)>;
/// Trains on a window of consecutive (subsampled) frames.
using TrainFn = std::function<FramePredictor(const VideoClip& window, RandomSource& rng)>;

/// Future-frame protocol: per trial the video is subsampled by `speed`, a
/// random window of `n` consecutive frames is trained on, and up to
/// `max_test` frames i outside the window with i+k also outside it are
/// predicted k steps ahead. Records mean PSNR of the model and of the copy
/// baseline (frame i+k := frame i).
std::vector<BenchmarkRecord> frame_prediction_benchmark(const VideoClip& video,
                                                        const TrainFn& train_fn, int n, int speed,
                                                        int k, int trials, RandomSource& rng,
                                                        int max_test = 100);

/// Per channel: mean over voxels of the population standard deviation across
/// samples, divided by the reference's standard deviation in that channel;
/// averaged over the channels that vary in the reference. Samples must share
/// a shape; the reference may differ in size.
double singan_diversity(const std::vector<VideoClip>& samples, const VideoClip& reference);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Mean and unbiased covariance of activations (one row per observation).
GaussianStats fit_gaussian(const Eigen::MatrixXd& activations);

/// Frechet distance between two Gaussians.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Maps a video to activations, one row per spatio-temporal position.
using FeatureFn = std::function<Eigen::MatrixXd(const VideoClip&)>;

/// Frechet distance between activation statistics of the two videos, or
/// nullopt when no feature function is available.
std::optional<double> svfid(const VideoClip& generated, const VideoClip& reference,
                            const FeatureFn& features);

/// Reads a numeric CSV (optional non-numeric header row) into a matrix.
Eigen::MatrixXd load_activations_csv(const std::string& path);

struct DiversityReport {
  double nnfdiv = 0.0;
  double nnfdist = 0.0;
  std::optional<double> singan_div;
  std::optional<double> svfid;
};

/// Per-sample NNF metrics averaged over samples; SinGAN diversity when at
/// least two samples are given; SVFID (mean over samples) when `features`
/// is set.
DiversityReport diversity_report(const std::vector<VideoClip>& samples, const VideoClip& reference,
                                 const FeatureFn& features = {});

}  // namespace solodiff
