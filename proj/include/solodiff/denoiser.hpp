#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solodiff/nn_ops.hpp"
#include "solodiff/tensor.hpp"

namespace solodiff {

enum class BlockKind { convnext, resnet };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);

/// Architecture of the fully-convolutional denoiser.
///
/// The trunk is a 3x3 stem, `depth` residual blocks at constant resolution and
/// a 1x1 head. A ConvNeXt block is depthwise k x k -> (+ step embedding) ->
/// channel norm -> 1x1 expand -> GELU -> 1x1 project, added back to its input.
/// `with_attention` and `with_resampling` re-introduce the global and
/// multi-resolution layers of the classic DDPM UNet for ablations.
struct DenoiserConfig {
  int depth = 16;
  int width = 64;
  int in_channels = 3;
  int out_channels = 3;
  int embed_dim = 64;
  bool uses_frame_gap = false;
  BlockKind block_kind = BlockKind::convnext;
  bool with_attention = false;
  bool with_resampling = false;
  int spatial_kernel = 7;
  int stem_kernel = 3;
  int expansion = 4;
  /// Largest |k| accepted by the frame-gap embedding.
  int max_frame_gap = 3;

  void validate() const;
  /// Smallest accepted input height/width (twice the stem kernel).
  int min_input_size() const { return 2 * stem_kernel; }
  /// Number of conditioning frames implied by in_channels.
  int conditioning_frames() const { return in_channels / out_channels - 1; }
  bool operator==(const DenoiserConfig&) const = default;
};

/// Chebyshev radius of the input region that can influence one output pixel,
/// or nullopt (unbounded) when attention or resampling is enabled.
std::optional<int> receptive_field_radius(const DenoiserConfig& cfg);

enum class EmbedKind { timestep, frame_gap };

struct EmbeddingVector {
  std::vector<float> values;
  EmbedKind source = EmbedKind::timestep;
};

/// Raw sinusoidal code of a (possibly negative) scalar: the first half holds
/// sin(v * w_i), the second half cos(v * w_i), with w_i = 10000^(-i / half).
std::vector<double> sinusoidal_embedding(double value, int dim);

/// Validated embedding of a diffusion step in [1, bound] or a frame gap in
/// [-bound, bound] \ {0}.
EmbeddingVector embed_scalar(int value, EmbedKind kind, int embed_dim, int bound);

/// The denoising network, templated on its scalar type: training and inference
/// run in float, gradient verification runs the same code in double.
///
/// All parameters live in one flat buffer (and gradients in a matching one),
/// which is what the optimizer, checkpoints and finite-difference checks see.
template <typename T>
class Network {
 public:
  using Mat = nn::Mat<T>;

  /// Forward record needed by backward().
  struct Tape;
  struct TapeDeleter {
    void operator()(Tape* tape) const;
  };
  using TapePtr = std::unique_ptr<Tape, TapeDeleter>;

  Network(const DenoiserConfig& cfg, std::uint64_t seed);
  Network(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(const Network&);
  Network& operator=(Network&&) noexcept;
  ~Network();

  const DenoiserConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> gradients() { return grads_; }
  std::span<const T> gradients() const { return grads_; }
  void zero_grad();

  /// `input` is in_channels x (h*w). Returns out_channels x (h*w). When `tape`
  /// is given, activations are recorded for backward().
  Mat forward(const Mat& input, int height, int width, int t, std::optional<int> k,
              Tape* tape = nullptr) const;

  /// Accumulates parameter gradients of <grad_output, forward(...)>.
  void backward(const Tape& tape, const Mat& grad_output);

  /// Same architecture and parameters in another scalar type.
  template <typename U>
  Network<U> cast() const;

  /// Builds a network whose parameters are `values` (size must match).
  static Network from_parameters(const DenoiserConfig& cfg, std::span<const T> values);

  /// Workspace for forward/backward passes.
  static TapePtr make_tape();

 private:
  struct Layout;
  void init_layout();
  void initialize(std::uint64_t seed);

  DenoiserConfig cfg_;
  std::vector<T> params_;
  std::vector<T> grads_;
  std::unique_ptr<Layout> layout_;
};

extern template class Network<float>;
extern template class Network<double>;

using Denoiser = Network<float>;

Denoiser build_denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

/// Tensor-level forward: x_t is concatenated with `cond_frames` along the
/// channel axis; t and k enter only through the embedding.
Tensor denoise_forward(const Denoiser& net, const Tensor& x_t, std::span<const Tensor> cond_frames,
                       int t, std::optional<int> k);

/// Packs a stack of tensors into the network's channel-row layout.
nn::Mat<float> to_feature_map(std::span<const Tensor> parts);
Tensor from_feature_map(const nn::Mat<float>& m, int height, int width);

}  // namespace solodiff

namespace solodiff {

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  std::vector<U> values(params_.begin(), params_.end());
  return Network<U>::from_parameters(cfg_, values);
}

}  // namespace solodiff
