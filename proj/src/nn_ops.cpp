#include "solodiff/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace solodiff::nn {

namespace {

// Copies one channel into a zero-bordered (H+2r) x (W+2r) buffer.
template <typename T>
void pad_plane(const T* src, Plane p, int r, std::vector<T>& dst) {
  const int pw = p.width + 2 * r;
  dst.assign(static_cast<std::size_t>(p.height + 2 * r) * pw, T(0));
  for (int y = 0; y < p.height; ++y) {
    std::copy(src + static_cast<std::ptrdiff_t>(y) * p.width,
              src + static_cast<std::ptrdiff_t>(y + 1) * p.width,
              dst.data() + static_cast<std::ptrdiff_t>(y + r) * pw + r);
  }
}

}  // namespace

template <typename T>
void depthwise_conv_forward(const Mat<T>& in, const T* weight, const T* bias, int k, Plane p,
                            Mat<T>& out) {
  const int channels = static_cast<int>(in.rows());
  const int H = p.height;
  const int W = p.width;
  const int r = k / 2;
  const int pw = W + 2 * r;
  out.resize(channels, p.size());
  std::vector<T> pad;
  for (int c = 0; c < channels; ++c) {
    pad_plane(in.row(c).data(), p, r, pad);
    T* o = out.row(c).data();
    const T* w = weight + static_cast<std::ptrdiff_t>(c) * k * k;
    std::fill(o, o + p.size(), bias[c]);
    for (int y = 0; y < H; ++y) {
      T* __restrict orow = o + static_cast<std::ptrdiff_t>(y) * W;
      for (int i = 0; i < k; ++i) {
        const T* irow = pad.data() + static_cast<std::ptrdiff_t>(y + i) * pw;
        for (int j = 0; j < k; ++j) {
          const T wv = w[i * k + j];
          const T* __restrict src = irow + j;
          for (int xx = 0; xx < W; ++xx) orow[xx] += wv * src[xx];
        }
      }
    }
  }
}

template <typename T>
void depthwise_conv_backward(const Mat<T>& in, const Mat<T>& dout, const T* weight, int k,
                             Plane p, T* dweight, T* dbias, Mat<T>& din) {
  const int channels = static_cast<int>(in.rows());
  const int H = p.height;
  const int W = p.width;
  const int r = k / 2;
  const int pw = W + 2 * r;
  using RowMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  std::vector<T> xpad, gpad;
  for (int c = 0; c < channels; ++c) {
    const T* g = dout.row(c).data();
    T* dx_row = din.row(c).data();
    const T* w = weight + static_cast<std::ptrdiff_t>(c) * k * k;
    T* dw = dweight + static_cast<std::ptrdiff_t>(c) * k * k;
    dbias[c] += dout.row(c).sum();

    pad_plane(in.row(c).data(), p, r, xpad);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        T acc = 0;
        for (int y = 0; y < H; ++y) {
          acc += RowMap(g + static_cast<std::ptrdiff_t>(y) * W, W)
                     .dot(RowMap(xpad.data() + static_cast<std::ptrdiff_t>(y + i) * pw + j, W));
        }
        dw[i * k + j] += acc;
      }
    }

    // Input gradient: correlation of the output gradient with the flipped kernel.
    pad_plane(g, p, r, gpad);
    for (int y = 0; y < H; ++y) {
      T* __restrict drow = dx_row + static_cast<std::ptrdiff_t>(y) * W;
      for (int i = 0; i < k; ++i) {
        const T* grow = gpad.data() + static_cast<std::ptrdiff_t>(y + 2 * r - i) * pw;
        for (int j = 0; j < k; ++j) {
          const T wv = w[i * k + j];
          const T* __restrict src = grow + 2 * r - j;
          for (int xx = 0; xx < W; ++xx) drow[xx] += wv * src[xx];
        }
      }
    }
  }
}

template <typename T>
void im2col(const Mat<T>& in, int k, Plane p, Mat<T>& cols) {
  const int channels = static_cast<int>(in.rows());
  const int H = p.height;
  const int W = p.width;
  const int r = k / 2;
  cols.setZero(static_cast<Eigen::Index>(channels) * k * k, p.size());
  for (int c = 0; c < channels; ++c) {
    const T* x = in.row(c).data();
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        T* dst = cols.row((static_cast<Eigen::Index>(c) * k + i) * k + j).data();
        const int dy = i - r;
        const int dx = j - r;
        const int xs = std::max(0, -dx);
        const int xe = std::min(W, W - dx);
        for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
          const T* src = x + static_cast<std::ptrdiff_t>(y + dy) * W + dx;
          T* d = dst + static_cast<std::ptrdiff_t>(y) * W;
          for (int xx = xs; xx < xe; ++xx) d[xx] = src[xx];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& cols, int k, Plane p, Mat<T>& din) {
  const int channels = static_cast<int>(din.rows());
  const int H = p.height;
  const int W = p.width;
  const int r = k / 2;
  for (int c = 0; c < channels; ++c) {
    T* x = din.row(c).data();
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const T* src = cols.row((static_cast<Eigen::Index>(c) * k + i) * k + j).data();
        const int dy = i - r;
        const int dx = j - r;
        const int xs = std::max(0, -dx);
        const int xe = std::min(W, W - dx);
        for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
          T* d = x + static_cast<std::ptrdiff_t>(y + dy) * W + dx;
          const T* s = src + static_cast<std::ptrdiff_t>(y) * W;
          for (int xx = xs; xx < xe; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

namespace {
template <typename T>
constexpr T kNormEps = T(1e-6);
}

template <typename T>
void channel_norm_forward(const Mat<T>& in, const T* gamma, const T* beta, Mat<T>& out,
                          NormCache<T>& cache) {
  const Eigen::Index C = in.rows();
  const Eigen::Index N = in.cols();
  RowVec<T> mean = RowVec<T>::Zero(N);
  for (Eigen::Index c = 0; c < C; ++c) mean += in.row(c);
  mean /= static_cast<T>(C);
  cache.xhat.resize(C, N);
  RowVec<T> var = RowVec<T>::Zero(N);
  for (Eigen::Index c = 0; c < C; ++c) {
    cache.xhat.row(c) = in.row(c) - mean;
    var.array() += cache.xhat.row(c).array().square();
  }
  var /= static_cast<T>(C);
  cache.rstd = (var.array() + kNormEps<T>).rsqrt().matrix();
  for (Eigen::Index c = 0; c < C; ++c) cache.xhat.row(c).array() *= cache.rstd.array();
  channel_norm_output(cache, gamma, beta, out);
}

template <typename T>
void channel_norm_output(const NormCache<T>& cache, const T* gamma, const T* beta, Mat<T>& out) {
  const Eigen::Index C = cache.xhat.rows();
  out.resize(C, cache.xhat.cols());
  for (Eigen::Index c = 0; c < C; ++c) {
    out.row(c).array() = cache.xhat.row(c).array() * gamma[c] + beta[c];
  }
}

template <typename T>
void channel_norm_backward(const Mat<T>& dout, const NormCache<T>& cache, const T* gamma,
                           T* dgamma, T* dbeta, Mat<T>& din) {
  const Eigen::Index C = dout.rows();
  const Eigen::Index N = dout.cols();
  RowVec<T> mean_g = RowVec<T>::Zero(N);
  RowVec<T> mean_gx = RowVec<T>::Zero(N);
  din.resize(C, N);
  for (Eigen::Index c = 0; c < C; ++c) {
    dgamma[c] += dout.row(c).dot(cache.xhat.row(c));
    dbeta[c] += dout.row(c).sum();
    din.row(c) = dout.row(c) * gamma[c];
    mean_g += din.row(c);
    mean_gx.array() += din.row(c).array() * cache.xhat.row(c).array();
  }
  mean_g /= static_cast<T>(C);
  mean_gx /= static_cast<T>(C);
  for (Eigen::Index c = 0; c < C; ++c) {
    din.row(c).array() = cache.rstd.array() * (din.row(c).array() - mean_g.array() -
                                               cache.xhat.row(c).array() * mean_gx.array());
  }
}

namespace {
template <typename T>
constexpr T kGeluScale = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluCubic = T(0.044715);
}  // namespace

template <typename T>
void gelu_forward(const Mat<T>& in, Mat<T>& out) {
  auto x = in.array();
  out = (T(0.5) * x * (T(1) + (kGeluScale<T> * (x + kGeluCubic<T> * x.cube())).tanh())).matrix();
}

template <typename T>
void gelu_backward(const Mat<T>& in, const Mat<T>& dout, Mat<T>& din) {
  auto x = in.array();
  auto th = (kGeluScale<T> * (x + kGeluCubic<T> * x.cube())).tanh();
  din = (dout.array() *
         (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th.square()) * kGeluScale<T> *
                                     (T(1) + T(3) * kGeluCubic<T> * x.square())))
            .matrix();
}

Plane pooled_plane(Plane p) { return Plane{(p.height + 1) / 2, (p.width + 1) / 2}; }

template <typename T>
void avg_pool2_forward(const Mat<T>& in, Plane p, Mat<T>& out) {
  const Plane lo = pooled_plane(p);
  out.setZero(in.rows(), lo.size());
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const T* x = in.row(c).data();
    T* o = out.row(c).data();
    for (int y = 0; y < lo.height; ++y) {
      const int ny = std::min(2, p.height - 2 * y);
      for (int xx = 0; xx < lo.width; ++xx) {
        const int nx = std::min(2, p.width - 2 * xx);
        T acc = 0;
        for (int a = 0; a < ny; ++a)
          for (int b = 0; b < nx; ++b) acc += x[(2 * y + a) * p.width + 2 * xx + b];
        o[y * lo.width + xx] = acc / static_cast<T>(ny * nx);
      }
    }
  }
}

template <typename T>
void avg_pool2_backward(const Mat<T>& dout, Plane p, Mat<T>& din) {
  const Plane lo = pooled_plane(p);
  din.setZero(dout.rows(), p.size());
  for (Eigen::Index c = 0; c < dout.rows(); ++c) {
    const T* g = dout.row(c).data();
    T* d = din.row(c).data();
    for (int y = 0; y < lo.height; ++y) {
      const int ny = std::min(2, p.height - 2 * y);
      for (int xx = 0; xx < lo.width; ++xx) {
        const int nx = std::min(2, p.width - 2 * xx);
        const T share = g[y * lo.width + xx] / static_cast<T>(ny * nx);
        for (int a = 0; a < ny; ++a)
          for (int b = 0; b < nx; ++b) d[(2 * y + a) * p.width + 2 * xx + b] += share;
      }
    }
  }
}

template <typename T>
void upsample2_forward(const Mat<T>& in, Plane p, Mat<T>& out) {
  const Plane lo = pooled_plane(p);
  out.resize(in.rows(), p.size());
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const T* x = in.row(c).data();
    T* o = out.row(c).data();
    for (int y = 0; y < p.height; ++y)
      for (int xx = 0; xx < p.width; ++xx) o[y * p.width + xx] = x[(y / 2) * lo.width + xx / 2];
  }
}

template <typename T>
void upsample2_backward(const Mat<T>& dout, Plane p, Mat<T>& din) {
  const Plane lo = pooled_plane(p);
  din.setZero(dout.rows(), lo.size());
  for (Eigen::Index c = 0; c < dout.rows(); ++c) {
    const T* g = dout.row(c).data();
    T* d = din.row(c).data();
    for (int y = 0; y < p.height; ++y)
      for (int xx = 0; xx < p.width; ++xx) d[(y / 2) * lo.width + xx / 2] += g[y * p.width + xx];
  }
}

#define SOLODIFF_INSTANTIATE(T)                                                                 \
  template void depthwise_conv_forward<T>(const Mat<T>&, const T*, const T*, int, Plane,        \
                                          Mat<T>&);                                             \
  template void depthwise_conv_backward<T>(const Mat<T>&, const Mat<T>&, const T*, int, Plane,  \
                                           T*, T*, Mat<T>&);                                    \
  template void im2col<T>(const Mat<T>&, int, Plane, Mat<T>&);                                  \
  template void col2im_add<T>(const Mat<T>&, int, Plane, Mat<T>&);                              \
  template void channel_norm_forward<T>(const Mat<T>&, const T*, const T*, Mat<T>&,             \
                                        NormCache<T>&);                                         \
  template void channel_norm_output<T>(const NormCache<T>&, const T*, const T*, Mat<T>&);       \
  template void channel_norm_backward<T>(const Mat<T>&, const NormCache<T>&, const T*, T*, T*,  \
                                         Mat<T>&);                                              \
  template void gelu_forward<T>(const Mat<T>&, Mat<T>&);                                        \
  template void gelu_backward<T>(const Mat<T>&, const Mat<T>&, Mat<T>&);                        \
  template void avg_pool2_forward<T>(const Mat<T>&, Plane, Mat<T>&);                            \
  template void avg_pool2_backward<T>(const Mat<T>&, Plane, Mat<T>&);                           \
  template void upsample2_forward<T>(const Mat<T>&, Plane, Mat<T>&);                            \
  template void upsample2_backward<T>(const Mat<T>&, Plane, Mat<T>&);

SOLODIFF_INSTANTIATE(float)
SOLODIFF_INSTANTIATE(double)

#undef SOLODIFF_INSTANTIATE

}  // namespace solodiff::nn
