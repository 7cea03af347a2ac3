#pragma once

#include <Eigen/Core>

namespace solodiff::nn {

/// Feature map layout: one row per channel, H*W pixels per row (row-major).
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct Plane {
  int height = 0;
  int width = 0;
  Eigen::Index size() const { return static_cast<Eigen::Index>(height) * width; }
};

// Depthwise k x k convolution, stride 1, zero padding k/2. `weight` is C x k*k.
template <typename T>
void depthwise_conv_forward(const Mat<T>& in, const T* weight, const T* bias, int k, Plane p,
                            Mat<T>& out);
/// Accumulates into dweight/dbias and adds the input gradient into `din`.
template <typename T>
void depthwise_conv_backward(const Mat<T>& in, const Mat<T>& dout, const T* weight, int k,
                             Plane p, T* dweight, T* dbias, Mat<T>& din);

/// Unfolds k x k zero-padded neighbourhoods: rows are (channel, ky, kx).
template <typename T>
void im2col(const Mat<T>& in, int k, Plane p, Mat<T>& cols);
/// Adjoint of im2col; adds into `din`.
template <typename T>
void col2im_add(const Mat<T>& cols, int k, Plane p, Mat<T>& din);

/// Per-pixel normalization across channels with a per-channel affine.
template <typename T>
struct NormCache {
  Mat<T> xhat;
  RowVec<T> rstd;
};
template <typename T>
void channel_norm_forward(const Mat<T>& in, const T* gamma, const T* beta, Mat<T>& out,
                          NormCache<T>& cache);
/// Accumulates dgamma/dbeta; overwrites `din`.
template <typename T>
void channel_norm_backward(const Mat<T>& dout, const NormCache<T>& cache, const T* gamma,
                           T* dgamma, T* dbeta, Mat<T>& din);
/// Recomputes the affine output from the cache.
template <typename T>
void channel_norm_output(const NormCache<T>& cache, const T* gamma, const T* beta, Mat<T>& out);

// tanh-approximated GELU.
template <typename T>
void gelu_forward(const Mat<T>& in, Mat<T>& out);
template <typename T>
void gelu_backward(const Mat<T>& in, const Mat<T>& dout, Mat<T>& din);

// 2x2 average pooling with ceil output size; edge windows average their valid pixels.
Plane pooled_plane(Plane p);
template <typename T>
void avg_pool2_forward(const Mat<T>& in, Plane p, Mat<T>& out);
template <typename T>
void avg_pool2_backward(const Mat<T>& dout, Plane p, Mat<T>& din);

// Nearest-neighbour 2x upsampling from pooled_plane(p) back to p.
template <typename T>
void upsample2_forward(const Mat<T>& in, Plane p, Mat<T>& out);
template <typename T>
void upsample2_backward(const Mat<T>& dout, Plane p, Mat<T>& din);

}  // namespace solodiff::nn
