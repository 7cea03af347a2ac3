#include <doctest.h>

#include <cmath>
#include <random>

#include "solodiff/nn_ops.hpp"

using namespace solodiff;
using nn::Mat;
using nn::Plane;

namespace {

Mat<double> random_mat(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n;
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

double inner(const Mat<double>& a, const Mat<double>& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST_CASE("depthwise convolution matches a direct zero-padded sum") {
  for (int k : {1, 3, 7}) {
    const Plane p{5, 9};
    const int C = 3;
    const Mat<double> in = random_mat(C, p.size(), 1);
    const Mat<double> w = random_mat(C, k * k, 2);
    const Mat<double> b = random_mat(C, 1, 3);
    Mat<double> out;
    nn::depthwise_conv_forward<double>(in, w.data(), b.data(), k, p, out);
    const int r = k / 2;
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
          double s = b(c, 0);
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              const int yy = y + i - r, xx = x + j - r;
              if (yy < 0 || yy >= p.height || xx < 0 || xx >= p.width) continue;
              s += w(c, i * k + j) * in(c, yy * p.width + xx);
            }
          }
          CHECK(out(c, y * p.width + x) == doctest::Approx(s).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("depthwise backward is the adjoint of forward") {
  const Plane p{6, 11};
  const int C = 2, k = 7;
  const Mat<double> in = random_mat(C, p.size(), 4);
  const Mat<double> w = random_mat(C, k * k, 5);
  const Mat<double> zero_bias = Mat<double>::Zero(C, 1);
  const Mat<double> g = random_mat(C, p.size(), 6);
  Mat<double> out;
  nn::depthwise_conv_forward<double>(in, w.data(), zero_bias.data(), k, p, out);

  Mat<double> dw = Mat<double>::Zero(C, k * k), db = Mat<double>::Zero(C, 1);
  Mat<double> din = Mat<double>::Zero(C, p.size());
  nn::depthwise_conv_backward<double>(in, g, w.data(), k, p, dw.data(), db.data(), din);
  // linear in the input: <g, conv(x)> = <conv^T g, x>
  CHECK(inner(g, out) == doctest::Approx(inner(din, in)).epsilon(1e-10));
  // linear in the weights: <g, conv_w(x)> = <dw, w>
  CHECK(inner(g, out) == doctest::Approx(inner(dw, w)).epsilon(1e-10));
  for (int c = 0; c < C; ++c) CHECK(db(c, 0) == doctest::Approx(g.row(c).sum()));
}

TEST_CASE("im2col and col2im_add are adjoint") {
  const Plane p{4, 5};
  const Mat<double> in = random_mat(2, p.size(), 7);
  Mat<double> cols;
  nn::im2col<double>(in, 3, p, cols);
  CHECK(cols.rows() == 18);
  const Mat<double> g = random_mat(cols.rows(), cols.cols(), 8);
  Mat<double> din = Mat<double>::Zero(2, p.size());
  nn::col2im_add<double>(g, 3, p, din);
  CHECK(inner(g, cols) == doctest::Approx(inner(din, in)).epsilon(1e-12));
  // centre tap row of channel 1 is the channel itself
  CHECK((cols.row(9 + 4) - in.row(1)).norm() == 0.0);
}

TEST_CASE("channel norm normalizes each pixel across channels") {
  const Mat<double> in = random_mat(5, 7, 9);
  const Mat<double> gamma = Mat<double>::Constant(5, 1, 1.0), beta = Mat<double>::Zero(5, 1);
  Mat<double> out;
  nn::NormCache<double> cache;
  nn::channel_norm_forward<double>(in, gamma.data(), beta.data(), out, cache);
  for (Eigen::Index j = 0; j < in.cols(); ++j) {
    CHECK(out.col(j).mean() == doctest::Approx(0.0).epsilon(1e-12).scale(1));
    const double var = out.col(j).squaredNorm() / 5.0;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("channel norm backward matches finite differences") {
  const Mat<double> in = random_mat(4, 3, 10);
  const Mat<double> gamma = random_mat(4, 1, 11), beta = random_mat(4, 1, 12);
  const Mat<double> g = random_mat(4, 3, 13);
  auto f = [&](const Mat<double>& x) {
    Mat<double> o;
    nn::NormCache<double> c;
    nn::channel_norm_forward<double>(x, gamma.data(), beta.data(), o, c);
    return inner(g, o);
  };
  Mat<double> out, din;
  nn::NormCache<double> cache;
  nn::channel_norm_forward<double>(in, gamma.data(), beta.data(), out, cache);
  Mat<double> dg = Mat<double>::Zero(4, 1), dbeta = Mat<double>::Zero(4, 1);
  nn::channel_norm_backward<double>(g, cache, gamma.data(), dg.data(), dbeta.data(), din);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    Mat<double> a = in, b = in;
    a.data()[i] += h;
    b.data()[i] -= h;
    CHECK(din.data()[i] == doctest::Approx((f(a) - f(b)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("gelu uses the tanh approximation and its derivative") {
  Mat<double> in(1, 5);
  in << -3.0, -0.5, 0.0, 0.7, 2.5;
  Mat<double> out;
  nn::gelu_forward<double>(in, out);
  auto ref = [](double x) {
    return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
  };
  for (int i = 0; i < 5; ++i) CHECK(out(0, i) == doctest::Approx(ref(in(0, i))).epsilon(1e-12));
  Mat<double> ones = Mat<double>::Ones(1, 5), din;
  nn::gelu_backward<double>(in, ones, din);
  for (int i = 0; i < 5; ++i) {
    const double x = in(0, i), h = 1e-6;
    CHECK(din(0, i) == doctest::Approx((ref(x + h) - ref(x - h)) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("pooling and upsampling handle odd sizes and are adjoint") {
  const Plane p{5, 7};
  const Plane lo = nn::pooled_plane(p);
  CHECK(lo.height == 3);
  CHECK(lo.width == 4);

  Mat<double> in = random_mat(2, p.size(), 14), pooled;
  nn::avg_pool2_forward<double>(in, p, pooled);
  // corner window holds a single pixel
  CHECK(pooled(1, lo.size() - 1) == doctest::Approx(in(1, p.size() - 1)));
  CHECK(pooled(0, 0) ==
        doctest::Approx((in(0, 0) + in(0, 1) + in(0, 7) + in(0, 8)) / 4.0));
  const Mat<double> g = random_mat(2, lo.size(), 15);
  Mat<double> din;
  nn::avg_pool2_backward<double>(g, p, din);
  CHECK(inner(g, pooled) == doctest::Approx(inner(din, in)).epsilon(1e-12));

  Mat<double> up;
  const Mat<double> low = random_mat(2, lo.size(), 16);
  nn::upsample2_forward<double>(low, p, up);
  CHECK(up(1, 3 * p.width + 6) == low(1, 1 * lo.width + 3));
  const Mat<double> gu = random_mat(2, p.size(), 17);
  Mat<double> dlow;
  nn::upsample2_backward<double>(gu, p, dlow);
  CHECK(inner(gu, up) == doctest::Approx(inner(dlow, low)).epsilon(1e-12));
}
