#include "solodiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "solodiff/error.hpp"

namespace solodiff {

std::string to_string(BlockKind kind) { return kind == BlockKind::convnext ? "convnext" : "resnet"; }

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "convnext") return BlockKind::convnext;
  if (s == "resnet") return BlockKind::resnet;
  throw ParameterError("unknown block kind '" + s + "'");
}

void DenoiserConfig::validate() const {
  if (depth < 1) throw ParameterError("denoiser depth must be >= 1");
  if (width < 1) throw ParameterError("denoiser width must be >= 1");
  if (out_channels < 1) throw ParameterError("denoiser out_channels must be >= 1");
  if (in_channels != out_channels && in_channels != 2 * out_channels &&
      in_channels != 3 * out_channels) {
    throw ParameterError("in_channels must be 1x, 2x or 3x out_channels (got " +
                         std::to_string(in_channels) + ")");
  }
  if (embed_dim < 2 || embed_dim % 2 != 0) {
    throw ParameterError("embed_dim must be a positive even number");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0 || stem_kernel < 1 || stem_kernel % 2 == 0) {
    throw ParameterError("kernel sizes must be odd and positive");
  }
  if (expansion < 1) throw ParameterError("expansion must be >= 1");
  if (uses_frame_gap && max_frame_gap < 1) throw ParameterError("max_frame_gap must be >= 1");
}

std::optional<int> receptive_field_radius(const DenoiserConfig& cfg) {
  if (cfg.with_attention || cfg.with_resampling) return std::nullopt;
  const int per_block =
      cfg.block_kind == BlockKind::convnext ? cfg.spatial_kernel / 2 : 2 * (cfg.stem_kernel / 2);
  return cfg.stem_kernel / 2 + cfg.depth * per_block;
}

std::vector<double> sinusoidal_embedding(double value, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ParameterError("embedding dimension must be even");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[static_cast<std::size_t>(i)] = std::sin(value * freq);
    out[static_cast<std::size_t>(i + half)] = std::cos(value * freq);
  }
  return out;
}

EmbeddingVector embed_scalar(int value, EmbedKind kind, int embed_dim, int bound) {
  if (kind == EmbedKind::timestep) {
    if (value < 1 || value > bound) {
      throw ParameterError("timestep " + std::to_string(value) + " outside [1, " +
                           std::to_string(bound) + "]");
    }
  } else if (value == 0 || value < -bound || value > bound) {
    throw ParameterError("frame gap " + std::to_string(value) + " outside [-" +
                         std::to_string(bound) + ", " + std::to_string(bound) + "] \\ {0}");
  }
  const std::vector<double> code = sinusoidal_embedding(value, embed_dim);
  return EmbeddingVector{std::vector<float>(code.begin(), code.end()), kind};
}

namespace {

#ifdef __GLIBC__
// Feature maps are reallocated on every pass; keep them on the heap instead of
// fresh mmap pages so each allocation does not page-fault.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1024 << 20);
  return true;
}();
#endif

struct Slot {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

enum class InitKind { weight, zero, one };

struct BlockSlots {
  // ConvNeXt
  Slot dw_w, dw_b, norm_g, norm_b, pw1_w, pw1_b, pw2_w, pw2_b;
  // ResNet
  Slot norm1_g, norm1_b, conv1_w, conv1_b, norm2_g, norm2_b, conv2_w, conv2_b;
  // both
  Slot emb_w, emb_b;
};

struct AttentionSlots {
  Slot norm_g, norm_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
};

}  // namespace

template <typename T>
struct Network<T>::Layout {
  struct Init {
    Slot slot;
    InitKind kind;
    int fan_in;
  };
  int emb_in = 0;
  Slot fc1_w, fc1_b, fc2_w, fc2_b, stem_w, stem_b;
  std::vector<BlockSlots> blocks;
  bool has_attention = false;
  AttentionSlots attn;
  int attention_after = -1;
  int resample_at = -1;
  Slot head_norm_g, head_norm_b, head_w, head_b;
  std::vector<Init> inits;
  std::size_t total = 0;

  Slot add(Eigen::Index rows, Eigen::Index cols, InitKind kind, int fan_in = 1) {
    Slot s{total, rows, cols};
    total += s.size();
    inits.push_back({s, kind, fan_in});
    return s;
  }
};

template <typename T>
struct Network<T>::Tape {
  struct Block {
    nn::Plane plane;
    Mat x_in;
    nn::NormCache<T> norm1;
    nn::NormCache<T> norm2;
    Mat pre;
  };
  struct Attention {
    nn::Plane plane;
    nn::NormCache<T> norm;
    Mat q, k, v, a, o;
  };
  nn::Plane full;
  Mat emb_in, z1, g1, e, ea;
  Mat stem_cols;
  std::vector<Block> blocks;
  Attention attn;
  nn::NormCache<T> head_norm;
};

template <typename T>
void Network<T>::TapeDeleter::operator()(Tape* tape) const {
  delete tape;
}

template <typename T>
typename Network<T>::TapePtr Network<T>::make_tape() {
  return TapePtr(new Tape());
}

template <typename T>
void Network<T>::init_layout() {
  cfg_.validate();
  auto L = std::make_unique<Layout>();
  const int C = cfg_.width;
  const int E = cfg_.embed_dim;
  const int hidden = cfg_.expansion * C;
  const int kk = cfg_.spatial_kernel * cfg_.spatial_kernel;
  const int sk = cfg_.stem_kernel * cfg_.stem_kernel;

  L->emb_in = cfg_.uses_frame_gap ? 2 * E : E;
  L->fc1_w = L->add(E, L->emb_in, InitKind::weight, L->emb_in);
  L->fc1_b = L->add(E, 1, InitKind::zero);
  L->fc2_w = L->add(E, E, InitKind::weight, E);
  L->fc2_b = L->add(E, 1, InitKind::zero);
  L->stem_w = L->add(C, static_cast<Eigen::Index>(cfg_.in_channels) * sk, InitKind::weight,
                     cfg_.in_channels * sk);
  L->stem_b = L->add(C, 1, InitKind::zero);

  for (int b = 0; b < cfg_.depth; ++b) {
    BlockSlots s;
    if (cfg_.block_kind == BlockKind::convnext) {
      s.dw_w = L->add(C, kk, InitKind::weight, kk);
      s.dw_b = L->add(C, 1, InitKind::zero);
      s.emb_w = L->add(C, E, InitKind::weight, E);
      s.emb_b = L->add(C, 1, InitKind::zero);
      s.norm_g = L->add(C, 1, InitKind::one);
      s.norm_b = L->add(C, 1, InitKind::zero);
      s.pw1_w = L->add(hidden, C, InitKind::weight, C);
      s.pw1_b = L->add(hidden, 1, InitKind::zero);
      s.pw2_w = L->add(C, hidden, InitKind::weight, hidden);
      s.pw2_b = L->add(C, 1, InitKind::zero);
    } else {
      s.norm1_g = L->add(C, 1, InitKind::one);
      s.norm1_b = L->add(C, 1, InitKind::zero);
      s.conv1_w = L->add(C, static_cast<Eigen::Index>(C) * sk, InitKind::weight, C * sk);
      s.conv1_b = L->add(C, 1, InitKind::zero);
      s.emb_w = L->add(C, E, InitKind::weight, E);
      s.emb_b = L->add(C, 1, InitKind::zero);
      s.norm2_g = L->add(C, 1, InitKind::one);
      s.norm2_b = L->add(C, 1, InitKind::zero);
      s.conv2_w = L->add(C, static_cast<Eigen::Index>(C) * sk, InitKind::weight, C * sk);
      s.conv2_b = L->add(C, 1, InitKind::zero);
    }
    L->blocks.push_back(s);
  }

  if (cfg_.with_attention) {
    L->has_attention = true;
    L->attention_after = std::max(0, cfg_.depth / 2 - 1);
    auto& a = L->attn;
    a.norm_g = L->add(C, 1, InitKind::one);
    a.norm_b = L->add(C, 1, InitKind::zero);
    a.q_w = L->add(C, C, InitKind::weight, C);
    a.q_b = L->add(C, 1, InitKind::zero);
    a.k_w = L->add(C, C, InitKind::weight, C);
    a.k_b = L->add(C, 1, InitKind::zero);
    a.v_w = L->add(C, C, InitKind::weight, C);
    a.v_b = L->add(C, 1, InitKind::zero);
    a.o_w = L->add(C, C, InitKind::weight, C);
    a.o_b = L->add(C, 1, InitKind::zero);
  }
  if (cfg_.with_resampling) L->resample_at = cfg_.depth / 2;

  L->head_norm_g = L->add(C, 1, InitKind::one);
  L->head_norm_b = L->add(C, 1, InitKind::zero);
  L->head_w = L->add(cfg_.out_channels, C, InitKind::weight, C);
  L->head_b = L->add(cfg_.out_channels, 1, InitKind::zero);

  params_.assign(L->total, T(0));
  grads_.assign(L->total, T(0));
  layout_ = std::move(L);
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  for (const auto& init : layout_->inits) {
    T* p = params_.data() + init.slot.offset;
    switch (init.kind) {
      case InitKind::zero:
        std::fill(p, p + init.slot.size(), T(0));
        break;
      case InitKind::one:
        std::fill(p, p + init.slot.size(), T(1));
        break;
      case InitKind::weight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(init.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < init.slot.size(); ++i) p[i] = static_cast<T>(dist(engine));
        break;
      }
    }
  }
}

template <typename T>
Network<T>::Network(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  init_layout();
  initialize(seed);
}

template <typename T>
Network<T>::Network(const Network& other)
    : cfg_(other.cfg_),
      params_(other.params_),
      grads_(other.grads_),
      layout_(std::make_unique<Layout>(*other.layout_)) {}

template <typename T>
Network<T>::Network(Network&&) noexcept = default;

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    params_ = other.params_;
    grads_ = other.grads_;
    layout_ = std::make_unique<Layout>(*other.layout_);
  }
  return *this;
}

template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
Network<T>::~Network() = default;

template <typename T>
Network<T> Network<T>::from_parameters(const DenoiserConfig& cfg, std::span<const T> values) {
  Network net(cfg, 0);
  if (values.size() != net.params_.size()) {
    throw ParameterError("parameter count " + std::to_string(values.size()) +
                         " does not match architecture (" + std::to_string(net.params_.size()) +
                         ")");
  }
  std::copy(values.begin(), values.end(), net.params_.begin());
  return net;
}

template <typename T>
void Network<T>::zero_grad() {
  std::fill(grads_.begin(), grads_.end(), T(0));
}

namespace {

template <typename T>
using ConstMap = Eigen::Map<const nn::Mat<T>>;
template <typename T>
using MutMap = Eigen::Map<nn::Mat<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const nn::Vec<T>>;
template <typename T>
using MutVecMap = Eigen::Map<nn::Vec<T>>;

template <typename T>
void add_row_bias(nn::Mat<T>& m, const T* bias) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).array() += bias[r];
}

template <typename T>
void add_row_sums(const nn::Mat<T>& m, T* out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r] += m.row(r).sum();
}

}  // namespace

template <typename T>
typename Network<T>::Mat Network<T>::forward(const Mat& input, int height, int width, int t,
                                             std::optional<int> k, Tape* tape) const {
  const Layout& L = *layout_;
  if (input.rows() != cfg_.in_channels) {
    throw ParameterError("denoiser expects " + std::to_string(cfg_.in_channels) +
                         " input channels, got " + std::to_string(input.rows()));
  }
  if (input.cols() != static_cast<Eigen::Index>(height) * width) {
    throw ParameterError("denoiser input size does not match height x width");
  }
  if (height < cfg_.min_input_size() || width < cfg_.min_input_size()) {
    throw ParameterError("denoiser input " + std::to_string(height) + "x" + std::to_string(width) +
                         " smaller than minimum " + std::to_string(cfg_.min_input_size()));
  }
  if (t < 1) throw ParameterError("diffusion step must be >= 1");
  if (cfg_.uses_frame_gap) {
    if (!k) throw ParameterError("frame-gap model called without k");
    if (*k == 0 || std::abs(*k) > cfg_.max_frame_gap) {
      throw ParameterError("frame gap " + std::to_string(*k) + " outside [-" +
                           std::to_string(cfg_.max_frame_gap) + ", " +
                           std::to_string(cfg_.max_frame_gap) + "] \\ {0}");
    }
  } else if (k) {
    throw ParameterError("model without frame-gap embedding called with k");
  }

  const T* P = params_.data();
  auto W = [&](const Slot& s) { return ConstMap<T>(P + s.offset, s.rows, s.cols); };
  auto V = [&](const Slot& s) { return ConstVecMap<T>(P + s.offset, s.rows); };

  Tape local;
  Tape& tp = tape ? *tape : local;
  const bool rec = tape != nullptr;
  const nn::Plane full{height, width};
  tp.full = full;
  const int C = cfg_.width;
  const int E = cfg_.embed_dim;

  // Step (and frame-gap) embedding.
  tp.emb_in.resize(L.emb_in, 1);
  {
    const auto ts = sinusoidal_embedding(t, E);
    for (int i = 0; i < E; ++i) tp.emb_in(i, 0) = static_cast<T>(ts[static_cast<std::size_t>(i)]);
    if (cfg_.uses_frame_gap) {
      const auto ks = sinusoidal_embedding(*k, E);
      for (int i = 0; i < E; ++i)
        tp.emb_in(E + i, 0) = static_cast<T>(ks[static_cast<std::size_t>(i)]);
    }
  }
  tp.z1 = W(L.fc1_w) * tp.emb_in;
  tp.z1.col(0) += V(L.fc1_b);
  nn::gelu_forward(tp.z1, tp.g1);
  tp.e = W(L.fc2_w) * tp.g1;
  tp.e.col(0) += V(L.fc2_b);
  nn::gelu_forward(tp.e, tp.ea);
  const ConstVecMap<T> ea(tp.ea.data(), E);

  Mat x;
  {
    Mat cols;
    nn::im2col(input, cfg_.stem_kernel, full, cols);
    x.noalias() = W(L.stem_w) * cols;
    add_row_bias(x, P + L.stem_b.offset);
    if (rec) tp.stem_cols = std::move(cols);
  }

  if (rec) tp.blocks.resize(static_cast<std::size_t>(cfg_.depth));
  Mat skip;
  nn::Plane plane = full;
  nn::NormCache<T> scratch1, scratch2;

  for (int b = 0; b < cfg_.depth; ++b) {
    const BlockSlots& s = L.blocks[static_cast<std::size_t>(b)];
    if (b == L.resample_at) {
      skip = x;
      Mat pooled;
      nn::avg_pool2_forward(x, plane, pooled);
      x = std::move(pooled);
      plane = nn::pooled_plane(plane);
    }
    typename Tape::Block* bt = rec ? &tp.blocks[static_cast<std::size_t>(b)] : nullptr;
    nn::NormCache<T>& n1 = bt ? bt->norm1 : scratch1;
    nn::NormCache<T>& n2 = bt ? bt->norm2 : scratch2;
    if (bt) {
      bt->plane = plane;
      bt->x_in = x;
    }
    nn::Vec<T> emb_bias = W(s.emb_w) * ea + V(s.emb_b);

    if (cfg_.block_kind == BlockKind::convnext) {
      Mat h;
      nn::depthwise_conv_forward(x, P + s.dw_w.offset, P + s.dw_b.offset, cfg_.spatial_kernel,
                                 plane, h);
      add_row_bias(h, emb_bias.data());
      Mat n;
      nn::channel_norm_forward(h, P + s.norm_g.offset, P + s.norm_b.offset, n, n1);
      Mat u;
      u.noalias() = W(s.pw1_w) * n;
      add_row_bias(u, P + s.pw1_b.offset);
      Mat g;
      nn::gelu_forward(u, g);
      x.noalias() += W(s.pw2_w) * g;
      add_row_bias(x, P + s.pw2_b.offset);
      if (bt) bt->pre = std::move(u);
    } else {
      const int ks = cfg_.stem_kernel;
      Mat n, a, cols;
      nn::channel_norm_forward(x, P + s.norm1_g.offset, P + s.norm1_b.offset, n, n1);
      nn::gelu_forward(n, a);
      nn::im2col(a, ks, plane, cols);
      Mat h;
      h.noalias() = W(s.conv1_w) * cols;
      add_row_bias(h, P + s.conv1_b.offset);
      add_row_bias(h, emb_bias.data());
      nn::channel_norm_forward(h, P + s.norm2_g.offset, P + s.norm2_b.offset, n, n2);
      nn::gelu_forward(n, a);
      nn::im2col(a, ks, plane, cols);
      x.noalias() += W(s.conv2_w) * cols;
      add_row_bias(x, P + s.conv2_b.offset);
    }

    if (L.has_attention && b == L.attention_after) {
      const AttentionSlots& as = L.attn;
      typename Tape::Attention local_attn;
      typename Tape::Attention& at = rec ? tp.attn : local_attn;
      at.plane = plane;
      Mat n;
      nn::channel_norm_forward(x, P + as.norm_g.offset, P + as.norm_b.offset, n, at.norm);
      at.q.noalias() = W(as.q_w) * n;
      add_row_bias(at.q, P + as.q_b.offset);
      at.k.noalias() = W(as.k_w) * n;
      add_row_bias(at.k, P + as.k_b.offset);
      at.v.noalias() = W(as.v_w) * n;
      add_row_bias(at.v, P + as.v_b.offset);
      const T scale = T(1) / std::sqrt(static_cast<T>(C));
      at.a.noalias() = at.q.transpose() * at.k;
      at.a *= scale;
      for (Eigen::Index i = 0; i < at.a.rows(); ++i) {
        auto row = at.a.row(i).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      at.o.noalias() = at.v * at.a.transpose();
      x.noalias() += W(as.o_w) * at.o;
      add_row_bias(x, P + as.o_b.offset);
    }
  }

  if (L.resample_at >= 0) {
    Mat up;
    nn::upsample2_forward(x, full, up);
    x = std::move(up);
    x += skip;
  }

  Mat n;
  nn::NormCache<T> head_local;
  nn::channel_norm_forward(x, P + L.head_norm_g.offset, P + L.head_norm_b.offset, n,
                           rec ? tp.head_norm : head_local);
  Mat out;
  out.noalias() = W(L.head_w) * n;
  add_row_bias(out, P + L.head_b.offset);
  return out;
}

template <typename T>
void Network<T>::backward(const Tape& tp, const Mat& grad_output) {
  const Layout& L = *layout_;
  const T* P = params_.data();
  T* G = grads_.data();
  auto W = [&](const Slot& s) { return ConstMap<T>(P + s.offset, s.rows, s.cols); };
  auto GW = [&](const Slot& s) { return MutMap<T>(G + s.offset, s.rows, s.cols); };
  auto GV = [&](const Slot& s) { return MutVecMap<T>(G + s.offset, s.rows); };
  const int C = cfg_.width;
  const int E = cfg_.embed_dim;
  const nn::Plane full = tp.full;

  if (tp.blocks.size() != static_cast<std::size_t>(cfg_.depth)) {
    throw ParameterError("backward called with a tape that was not recorded");
  }

  const ConstVecMap<T> ea(tp.ea.data(), E);
  nn::Vec<T> d_ea = nn::Vec<T>::Zero(E);

  // Head.
  Mat dx;
  {
    Mat n;
    nn::channel_norm_output(tp.head_norm, P + L.head_norm_g.offset, P + L.head_norm_b.offset, n);
    GW(L.head_w).noalias() += grad_output * n.transpose();
    add_row_sums(grad_output, G + L.head_b.offset);
    Mat dn;
    dn.noalias() = W(L.head_w).transpose() * grad_output;
    nn::channel_norm_backward(dn, tp.head_norm, P + L.head_norm_g.offset,
                              G + L.head_norm_g.offset, G + L.head_norm_b.offset, dx);
  }

  Mat d_skip;
  if (L.resample_at >= 0) {
    d_skip = dx;
    Mat low;
    nn::upsample2_backward(dx, full, low);
    dx = std::move(low);
  }

  for (int b = cfg_.depth - 1; b >= 0; --b) {
    const BlockSlots& s = L.blocks[static_cast<std::size_t>(b)];
    const typename Tape::Block& bt = tp.blocks[static_cast<std::size_t>(b)];
    const nn::Plane plane = bt.plane;

    if (L.has_attention && b == L.attention_after) {
      const AttentionSlots& as = L.attn;
      const typename Tape::Attention& at = tp.attn;
      GW(as.o_w).noalias() += dx * at.o.transpose();
      add_row_sums(dx, G + as.o_b.offset);
      Mat d_o;
      d_o.noalias() = W(as.o_w).transpose() * dx;
      Mat dv;
      dv.noalias() = d_o * at.a;
      Mat ds;
      ds.noalias() = d_o.transpose() * at.v;
      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        const T dot = ds.row(i).dot(at.a.row(i));
        ds.row(i).array() = at.a.row(i).array() * (ds.row(i).array() - dot);
      }
      ds *= T(1) / std::sqrt(static_cast<T>(C));
      Mat dq;
      dq.noalias() = at.k * ds.transpose();
      Mat dk;
      dk.noalias() = at.q * ds;
      Mat n;
      nn::channel_norm_output(at.norm, P + as.norm_g.offset, P + as.norm_b.offset, n);
      GW(as.q_w).noalias() += dq * n.transpose();
      add_row_sums(dq, G + as.q_b.offset);
      GW(as.k_w).noalias() += dk * n.transpose();
      add_row_sums(dk, G + as.k_b.offset);
      GW(as.v_w).noalias() += dv * n.transpose();
      add_row_sums(dv, G + as.v_b.offset);
      Mat dn;
      dn.noalias() = W(as.q_w).transpose() * dq;
      dn.noalias() += W(as.k_w).transpose() * dk;
      dn.noalias() += W(as.v_w).transpose() * dv;
      Mat dxin;
      nn::channel_norm_backward(dn, at.norm, P + as.norm_g.offset, G + as.norm_g.offset,
                                G + as.norm_b.offset, dxin);
      dx += dxin;
    }

    nn::Vec<T> d_emb_bias;
    if (cfg_.block_kind == BlockKind::convnext) {
      Mat g;
      nn::gelu_forward(bt.pre, g);
      GW(s.pw2_w).noalias() += dx * g.transpose();
      add_row_sums(dx, G + s.pw2_b.offset);
      Mat dg;
      dg.noalias() = W(s.pw2_w).transpose() * dx;
      Mat du;
      nn::gelu_backward(bt.pre, dg, du);
      Mat n;
      nn::channel_norm_output(bt.norm1, P + s.norm_g.offset, P + s.norm_b.offset, n);
      GW(s.pw1_w).noalias() += du * n.transpose();
      add_row_sums(du, G + s.pw1_b.offset);
      Mat dn;
      dn.noalias() = W(s.pw1_w).transpose() * du;
      Mat dh;
      nn::channel_norm_backward(dn, bt.norm1, P + s.norm_g.offset, G + s.norm_g.offset,
                                G + s.norm_b.offset, dh);
      d_emb_bias = dh.rowwise().sum();
      nn::depthwise_conv_backward(bt.x_in, dh, P + s.dw_w.offset, cfg_.spatial_kernel, plane,
                                  G + s.dw_w.offset, G + s.dw_b.offset, dx);
    } else {
      const int ks = cfg_.stem_kernel;
      Mat n, a, cols;
      nn::channel_norm_output(bt.norm2, P + s.norm2_g.offset, P + s.norm2_b.offset, n);
      nn::gelu_forward(n, a);
      nn::im2col(a, ks, plane, cols);
      GW(s.conv2_w).noalias() += dx * cols.transpose();
      add_row_sums(dx, G + s.conv2_b.offset);
      Mat dcols;
      dcols.noalias() = W(s.conv2_w).transpose() * dx;
      Mat da = Mat::Zero(C, plane.size());
      nn::col2im_add(dcols, ks, plane, da);
      Mat dn;
      nn::gelu_backward(n, da, dn);
      Mat dh;
      nn::channel_norm_backward(dn, bt.norm2, P + s.norm2_g.offset, G + s.norm2_g.offset,
                                G + s.norm2_b.offset, dh);
      d_emb_bias = dh.rowwise().sum();
      GV(s.conv1_b) += d_emb_bias;

      nn::channel_norm_output(bt.norm1, P + s.norm1_g.offset, P + s.norm1_b.offset, n);
      nn::gelu_forward(n, a);
      nn::im2col(a, ks, plane, cols);
      GW(s.conv1_w).noalias() += dh * cols.transpose();
      dcols.noalias() = W(s.conv1_w).transpose() * dh;
      da.setZero(C, plane.size());
      nn::col2im_add(dcols, ks, plane, da);
      nn::gelu_backward(n, da, dn);
      Mat dxin;
      nn::channel_norm_backward(dn, bt.norm1, P + s.norm1_g.offset, G + s.norm1_g.offset,
                                G + s.norm1_b.offset, dxin);
      dx += dxin;
    }
    GV(s.emb_b) += d_emb_bias;
    GW(s.emb_w).noalias() += d_emb_bias * ea.transpose();
    d_ea.noalias() += W(s.emb_w).transpose() * d_emb_bias;

    if (b == L.resample_at) {
      Mat up;
      nn::avg_pool2_backward(dx, full, up);
      dx = std::move(up);
      dx += d_skip;
    }
  }

  // Stem.
  GW(L.stem_w).noalias() += dx * tp.stem_cols.transpose();
  add_row_sums(dx, G + L.stem_b.offset);

  // Embedding MLP.
  Mat d_ea_m(E, 1);
  d_ea_m.col(0) = d_ea;
  Mat de;
  nn::gelu_backward(tp.e, d_ea_m, de);
  GW(L.fc2_w).noalias() += de * tp.g1.transpose();
  GV(L.fc2_b) += de.col(0);
  Mat dg1;
  dg1.noalias() = W(L.fc2_w).transpose() * de;
  Mat dz1;
  nn::gelu_backward(tp.z1, dg1, dz1);
  GW(L.fc1_w).noalias() += dz1 * tp.emb_in.transpose();
  GV(L.fc1_b) += dz1.col(0);
}

template class Network<float>;
template class Network<double>;

Denoiser build_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) { return Denoiser(cfg, seed); }

nn::Mat<float> to_feature_map(std::span<const Tensor> parts) {
  if (parts.empty()) throw ParameterError("no tensors to pack");
  const int h = parts[0].height();
  const int w = parts[0].width();
  int channels = 0;
  for (const Tensor& p : parts) {
    if (p.height() != h || p.width() != w) {
      throw ParameterError("conditioning frame " + p.shape().str() +
                           " does not match noisy input " + parts[0].shape().str());
    }
    channels += p.channels();
  }
  nn::Mat<float> m(channels, static_cast<Eigen::Index>(h) * w);
  Eigen::Index row = 0;
  for (const Tensor& p : parts) {
    for (int c = 0; c < p.channels(); ++c, ++row) {
      m.row(row) = Eigen::Map<const nn::RowVec<float>>(p.plane(c), m.cols());
    }
  }
  return m;
}

Tensor from_feature_map(const nn::Mat<float>& m, int height, int width) {
  Tensor t(static_cast<int>(m.rows()), height, width);
  std::copy(m.data(), m.data() + m.size(), t.data().begin());
  return t;
}

Tensor denoise_forward(const Denoiser& net, const Tensor& x_t, std::span<const Tensor> cond_frames,
                       int t, std::optional<int> k) {
  const DenoiserConfig& cfg = net.config();
  if (x_t.channels() != cfg.out_channels) {
    throw ParameterError("noisy input has " + std::to_string(x_t.channels()) +
                         " channels, model expects " + std::to_string(cfg.out_channels));
  }
  const int expected = cfg.conditioning_frames();
  if (static_cast<int>(cond_frames.size()) != expected) {
    throw ParameterError("model expects " + std::to_string(expected) +
                         " conditioning frames, got " + std::to_string(cond_frames.size()));
  }
  std::vector<Tensor> parts;
  parts.reserve(cond_frames.size() + 1);
  parts.push_back(x_t);
  for (const Tensor& c : cond_frames) {
    require_same_shape(x_t, c, "conditioning frame");
    parts.push_back(c);
  }
  const nn::Mat<float> out = net.forward(to_feature_map(parts), x_t.height(), x_t.width(), t, k);
  return from_feature_map(out, x_t.height(), x_t.width());
}

}  // namespace solodiff
