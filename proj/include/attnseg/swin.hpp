#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"
#include "attnseg/imaging.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/trace.hpp"

namespace attnseg {

/// Hierarchical windowed-attention classifier configuration. Four layers;
/// the token grid halves and the channel width doubles after each of the
/// first three. When a layer's grid is no larger than the window, the window
/// clamps to the grid and the shifted blocks of that layer use shift 0.
struct SwinConfig {
  int input_side = 384;
  int patch_size = 4;
  int window_size = 12;
  int embed_dim = 128;
  std::array<int, 4> depths{2, 2, 18, 2};
  std::array<int, 4> num_heads{4, 8, 16, 32};
  int num_classes = 2;
  float mlp_ratio = 4.f;
  float dropout = 0.f;    // applied after attention projection and MLP linears during training
  float drop_path = 0.f;  // residual-branch drop during training

  int grid_side(int layer) const { return (input_side / patch_size) >> layer; }
  int layer_dim(int layer) const { return embed_dim << layer; }
  int effective_window(int layer) const { return std::min(window_size, grid_side(layer)); }
  int shift_size(int layer) const {
    return grid_side(layer) <= window_size ? 0 : effective_window(layer) / 2;
  }
  int windows_per_side(int layer) const { return grid_side(layer) / effective_window(layer); }
  int num_windows(int layer) const { return windows_per_side(layer) * windows_per_side(layer); }
  int total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }
  int mlp_hidden(int layer) const {
    return static_cast<int>(mlp_ratio * static_cast<float>(layer_dim(layer)));
  }
  int positive_class_index() const { return num_classes == 2 ? 1 : 0; }

  void validate() const;

  /// CPU-friendly configuration used throughout the synthetic experiments.
  static SwinConfig desk_scale();
  /// Minimal geometry for finite-difference gradient checks.
  static SwinConfig tiny_test();
};

std::string swin_config_to_json(const SwinConfig& config);
SwinConfig swin_config_from_json(const std::string& json_text);

template <class T>
struct ParamRef {
  std::string name;
  T* data = nullptr;
  Index size = 0;
  bool decay = false;
};

template <class T>
struct BlockParams {
  Vec<T> ln1_gamma, ln1_beta;
  Mat<T> w_qkv;
  Vec<T> b_qkv;
  Mat<T> bias_table;  // [(2w-1)^2 x heads]
  Mat<T> w_proj;
  Vec<T> b_proj;
  Vec<T> ln2_gamma, ln2_beta;
  Mat<T> w_fc1;
  Vec<T> b_fc1;
  Mat<T> w_fc2;
  Vec<T> b_fc2;
};

template <class T>
struct MergeParams {
  Vec<T> ln_gamma, ln_beta;
  Mat<T> reduction;  // [4C x 2C], no bias
};

template <class T>
struct SwinParams {
  Mat<T> patch_weight;  // [patch*patch*3 x embed]
  Vec<T> patch_bias;
  Vec<T> embed_ln_gamma, embed_ln_beta;
  std::vector<BlockParams<T>> blocks;
  std::vector<MergeParams<T>> merges;
  Vec<T> head_ln_gamma, head_ln_beta;
  Mat<T> head_weight;  // [C4 x num_classes]
  Vec<T> head_bias;

  void allocate(const SwinConfig& config);
  void set_zero();

  /// Stable, name-addressable view over every tensor. Weight matrices carry
  /// decay=true; vectors and bias tables are excluded from weight decay.
  std::vector<ParamRef<T>> refs();
  std::vector<ParamRef<const T>> refs() const;
};

/// Per-sample activations kept for the backward pass.
template <class T>
struct SwinCache {
  struct Block {
    Mat<T> x_in;
    Mat<T> ln1_xhat;
    Vec<T> ln1_inv_sigma;
    Mat<T> attn_in_wm;  // LN1 output permuted to window-major token order
    Mat<T> qkv_wm;      // [T x 3C]
    std::vector<Mat<T>> attn;  // window-major, per window*head
    Mat<T> attn_out_wm;        // concatenated head outputs, pre projection
    Mat<T> proj_dropout;       // empty when inactive
    T drop_path_attn = T(1);
    Mat<T> x_res;
    Mat<T> ln2_xhat;
    Vec<T> ln2_inv_sigma;
    Mat<T> mlp_in;
    Mat<T> mlp_pre;
    Mat<T> mlp_hidden;
    Mat<T> hidden_dropout;
    Mat<T> out_dropout;
    T drop_path_mlp = T(1);
    Mat<T> x_out;
  };
  struct Merge {
    Mat<T> gathered;  // [T/4 x 4C]
    Mat<T> ln_xhat;
    Vec<T> ln_inv_sigma;
  };

  Mat<T> patches;  // [G^2 x patch*patch*3]
  Mat<T> embed_ln_xhat;
  Vec<T> embed_ln_inv_sigma;
  std::vector<Block> blocks;
  std::vector<Merge> merges;
  Mat<T> final_tokens;  // output of the last block
  Mat<T> head_ln_xhat;
  Vec<T> head_ln_inv_sigma;
  Vec<T> pooled;
  bool valid = false;
};

template <class T>
struct ClassifierOutput {
  Vec<T> logits;
  T y1 = T(0);  // positive-class score driving the attention gradients
  int positive_index = 0;
  AttentionTrace trace;       // filled when attention recording was requested
  MatD final_features;        // last-block tokens, when feature recording was requested
  MatD final_feature_grads;   // populated by backward_positive_class
};

struct RecordOptions {
  bool attention = false;
  bool features = false;
};

/// Additive nudge on the pre-softmax attention logits of one block, for
/// finite-difference probes. Offsets are indexed like the trace: w*heads + h.
template <class T>
struct AttnLogitOffsets {
  int block_index = -1;
  std::vector<Mat<T>> per_window_head;
};

namespace detail {

template <class T>
struct LayerGeometry {
  int grid = 0, window = 0, shift = 0, nw = 0, n = 0;
  std::vector<int> src_regular;  // window-major position -> grid-order row
  std::vector<int> src_shifted;
  Eigen::ArrayXXi rel_index;          // [n x n] offsets into the bias table
  std::vector<Mat<T>> shift_masks;    // per window; empty matrix = no mask needed
};

template <class T>
void layer_norm_forward(const Mat<T>& x, const Vec<T>& gamma, const Vec<T>& beta, Mat<T>& y,
                        Mat<T>& xhat, Vec<T>& inv_sigma) {
  const T eps = T(1e-5);
  const Index rows = x.rows(), cols = x.cols();
  y.resize(rows, cols);
  xhat.resize(rows, cols);
  inv_sigma.resize(rows);
  for (Index i = 0; i < rows; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    const T inv = T(1) / std::sqrt(var + eps);
    inv_sigma(i) = inv;
    xhat.row(i) = (x.row(i).array() - mu) * inv;
    y.row(i) = xhat.row(i).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
}

/// dX for y = gamma*xhat + beta given dy; accumulates dgamma/dbeta.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const Vec<T>& inv_sigma,
                           const Vec<T>& gamma, Vec<T>* dgamma, Vec<T>* dbeta) {
  const Index rows = dy.rows(), cols = dy.cols();
  Mat<T> dx(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    Eigen::Array<T, 1, Eigen::Dynamic> dxhat =
        dy.row(i).cwiseProduct(gamma.transpose()).array();
    const T m1 = dxhat.mean();
    const T m2 = (dxhat * xhat.row(i).array()).mean();
    dx.row(i) = (inv_sigma(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
  }
  if (dgamma) dgamma->noalias() += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  if (dbeta) dbeta->noalias() += dy.colwise().sum().transpose();
  return dx;
}

template <class T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <class T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(-x * x / T(2)) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

}  // namespace detail

template <class T>
class SwinModel {
 public:
  SwinModel(const SwinConfig& config, std::uint64_t seed);

  const SwinConfig& config() const { return config_; }
  SwinParams<T>& params() { return params_; }
  const SwinParams<T>& params() const { return params_; }
  std::vector<ParamRef<T>> parameters() { return params_.refs(); }

  ClassifierOutput<T> forward(const ModelInput& input, const RecordOptions& record = {},
                              SwinCache<T>* cache = nullptr,
                              const AttnLogitOffsets<T>* offsets = nullptr,
                              Rng* train_rng = nullptr) const;

  /// Backprop from dlogits. Accumulates parameter gradients into `grads` when
  /// non-null; writes attention gradients into `out->trace` when the forward
  /// recorded attention, and feature gradients when features were recorded.
  void backward(const SwinCache<T>& cache, const Vec<T>& dlogits, SwinParams<T>* grads,
                ClassifierOutput<T>* out) const;

  /// Gradient of the positive-class logit with respect to every recorded
  /// attention map (and the final feature map, when recorded).
  void backward_positive_class(const SwinCache<T>& cache, ClassifierOutput<T>& out) const;

 private:
  SwinConfig config_;
  SwinParams<T> params_;
  std::vector<detail::LayerGeometry<T>> geometry_;

  void build_geometry();
  Mat<T> extract_patches(const ModelInput& input) const;
};

// ---------------------------------------------------------------------------
// implementation

inline void SwinConfig::validate() const {
  if (input_side <= 0 || patch_size <= 0 || input_side % patch_size != 0)
    throw ConfigError("input side must be a positive multiple of patch size");
  if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (!(mlp_ratio > 0.f)) throw ConfigError("mlp_ratio must be positive");
  if (window_size < 1) throw ConfigError("window_size must be at least 1");
  for (int l = 0; l < 4; ++l) {
    if (depths[static_cast<std::size_t>(l)] < 2 || depths[static_cast<std::size_t>(l)] % 2 != 0)
      throw ConfigError("layer depths must be even and at least 2");
    if (num_heads[static_cast<std::size_t>(l)] < 1) throw ConfigError("layer must have at least one head");
    if (layer_dim(l) % num_heads[static_cast<std::size_t>(l)] != 0)
      throw ConfigError("layer dim must divide evenly across heads");
    const int g = grid_side(l);
    if (g < 1) throw ConfigError("token grid vanishes at layer " + std::to_string(l + 1));
    if (l < 3 && g % 2 != 0) throw ConfigError("token grid must be even where layers merge");
    const int w = effective_window(l);
    if (g % w != 0)
      throw ConfigError("token grid " + std::to_string(g) + " at layer " + std::to_string(l + 1) +
                        " does not tile with window " + std::to_string(w));
  }
}

inline SwinConfig SwinConfig::desk_scale() {
  SwinConfig c;
  c.input_side = 96;
  c.patch_size = 4;
  c.window_size = 3;
  c.embed_dim = 16;
  c.depths = {2, 2, 2, 2};
  c.num_heads = {2, 2, 4, 4};
  c.num_classes = 2;
  return c;
}

inline SwinConfig SwinConfig::tiny_test() {
  SwinConfig c;
  c.input_side = 32;
  c.patch_size = 4;
  c.window_size = 4;
  c.embed_dim = 8;
  c.depths = {2, 2, 2, 2};
  c.num_heads = {2, 2, 4, 4};
  c.num_classes = 2;
  return c;
}

template <class T>
void SwinParams<T>::allocate(const SwinConfig& config) {
  const int p = config.patch_size;
  patch_weight.resize(Index(p) * p * 3, config.embed_dim);
  patch_bias.resize(config.embed_dim);
  embed_ln_gamma.resize(config.embed_dim);
  embed_ln_beta.resize(config.embed_dim);
  blocks.clear();
  for (int l = 0; l < 4; ++l) {
    const int c = config.layer_dim(l);
    const int w = config.effective_window(l);
    const int hidden = config.mlp_hidden(l);
    for (int d = 0; d < config.depths[static_cast<std::size_t>(l)]; ++d) {
      BlockParams<T> b;
      b.ln1_gamma.resize(c);
      b.ln1_beta.resize(c);
      b.w_qkv.resize(c, 3 * c);
      b.b_qkv.resize(3 * c);
      b.bias_table.resize(Index(2 * w - 1) * (2 * w - 1), config.num_heads[static_cast<std::size_t>(l)]);
      b.w_proj.resize(c, c);
      b.b_proj.resize(c);
      b.ln2_gamma.resize(c);
      b.ln2_beta.resize(c);
      b.w_fc1.resize(c, hidden);
      b.b_fc1.resize(hidden);
      b.w_fc2.resize(hidden, c);
      b.b_fc2.resize(c);
      blocks.push_back(std::move(b));
    }
  }
  merges.clear();
  for (int l = 0; l < 3; ++l) {
    MergeParams<T> m;
    const int c = config.layer_dim(l);
    m.ln_gamma.resize(4 * c);
    m.ln_beta.resize(4 * c);
    m.reduction.resize(4 * c, 2 * c);
    merges.push_back(std::move(m));
  }
  const int c4 = config.layer_dim(3);
  head_ln_gamma.resize(c4);
  head_ln_beta.resize(c4);
  head_weight.resize(c4, config.num_classes);
  head_bias.resize(config.num_classes);
}

template <class T>
void SwinParams<T>::set_zero() {
  for (auto& r : refs()) std::fill(r.data, r.data + r.size, T(0));
}

template <class T>
std::vector<ParamRef<T>> SwinParams<T>::refs() {
  std::vector<ParamRef<T>> out;
  auto add = [&out](const std::string& name, auto& tensor, bool decay) {
    out.push_back({name, tensor.data(), tensor.size(), decay});
  };
  add("patch.weight", patch_weight, true);
  add("patch.bias", patch_bias, false);
  add("embed_ln.gamma", embed_ln_gamma, false);
  add("embed_ln.beta", embed_ln_beta, false);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    auto& b = blocks[i];
    add(p + "ln1.gamma", b.ln1_gamma, false);
    add(p + "ln1.beta", b.ln1_beta, false);
    add(p + "qkv.weight", b.w_qkv, true);
    add(p + "qkv.bias", b.b_qkv, false);
    add(p + "bias_table", b.bias_table, false);
    add(p + "proj.weight", b.w_proj, true);
    add(p + "proj.bias", b.b_proj, false);
    add(p + "ln2.gamma", b.ln2_gamma, false);
    add(p + "ln2.beta", b.ln2_beta, false);
    add(p + "fc1.weight", b.w_fc1, true);
    add(p + "fc1.bias", b.b_fc1, false);
    add(p + "fc2.weight", b.w_fc2, true);
    add(p + "fc2.bias", b.b_fc2, false);
  }
  for (std::size_t i = 0; i < merges.size(); ++i) {
    const std::string p = "merge" + std::to_string(i) + ".";
    auto& m = merges[i];
    add(p + "ln.gamma", m.ln_gamma, false);
    add(p + "ln.beta", m.ln_beta, false);
    add(p + "reduction", m.reduction, true);
  }
  add("head_ln.gamma", head_ln_gamma, false);
  add("head_ln.beta", head_ln_beta, false);
  add("head.weight", head_weight, true);
  add("head.bias", head_bias, false);
  return out;
}

template <class T>
std::vector<ParamRef<const T>> SwinParams<T>::refs() const {
  auto mut = const_cast<SwinParams<T>*>(this)->refs();
  std::vector<ParamRef<const T>> out;
  out.reserve(mut.size());
  for (auto& r : mut) out.push_back({r.name, r.data, r.size, r.decay});
  return out;
}

template <class T>
SwinModel<T>::SwinModel(const SwinConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  params_.allocate(config_);
  Rng rng(seed);
  auto trunc_fill = [&rng](Mat<T>& m) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.truncated_normal(0.02));
  };
  trunc_fill(params_.patch_weight);
  params_.patch_bias.setZero();
  params_.embed_ln_gamma.setOnes();
  params_.embed_ln_beta.setZero();
  for (auto& b : params_.blocks) {
    b.ln1_gamma.setOnes();
    b.ln1_beta.setZero();
    trunc_fill(b.w_qkv);
    b.b_qkv.setZero();
    trunc_fill(b.bias_table);
    trunc_fill(b.w_proj);
    b.b_proj.setZero();
    b.ln2_gamma.setOnes();
    b.ln2_beta.setZero();
    trunc_fill(b.w_fc1);
    b.b_fc1.setZero();
    trunc_fill(b.w_fc2);
    b.b_fc2.setZero();
  }
  for (auto& m : params_.merges) {
    m.ln_gamma.setOnes();
    m.ln_beta.setZero();
    trunc_fill(m.reduction);
  }
  params_.head_ln_gamma.setOnes();
  params_.head_ln_beta.setZero();
  trunc_fill(params_.head_weight);
  params_.head_bias.setZero();
  build_geometry();
}

template <class T>
void SwinModel<T>::build_geometry() {
  geometry_.clear();
  for (int l = 0; l < 4; ++l) {
    detail::LayerGeometry<T> g;
    g.grid = config_.grid_side(l);
    g.window = config_.effective_window(l);
    g.shift = config_.shift_size(l);
    g.n = g.window * g.window;
    const int per_side = g.grid / g.window;
    g.nw = per_side * per_side;

    auto build_perm = [&](int shift) {
      std::vector<int> src(static_cast<std::size_t>(g.grid) * g.grid);
      int p = 0;
      for (int wi = 0; wi < per_side; ++wi)
        for (int wj = 0; wj < per_side; ++wj)
          for (int ti = 0; ti < g.window; ++ti)
            for (int tj = 0; tj < g.window; ++tj, ++p) {
              const int gi = wi * g.window + ti;
              const int gj = wj * g.window + tj;
              const int oi = (gi + shift) % g.grid;
              const int oj = (gj + shift) % g.grid;
              src[static_cast<std::size_t>(p)] = oi * g.grid + oj;
            }
      return src;
    };
    g.src_regular = build_perm(0);
    g.src_shifted = build_perm(g.shift);

    g.rel_index.resize(g.n, g.n);
    for (int qi = 0; qi < g.window; ++qi)
      for (int qj = 0; qj < g.window; ++qj)
        for (int ki = 0; ki < g.window; ++ki)
          for (int kj = 0; kj < g.window; ++kj) {
            const int q = qi * g.window + qj;
            const int k = ki * g.window + kj;
            g.rel_index(q, k) = (qi - ki + g.window - 1) * (2 * g.window - 1) + (qj - kj + g.window - 1);
          }

    if (g.shift > 0) {
      // Region labels in rolled coordinates; tokens from different regions
      // must not attend to each other across the wrap boundary.
      auto region_of = [&](int coord) {
        if (coord < g.grid - g.window) return 0;
        if (coord < g.grid - g.shift) return 1;
        return 2;
      };
      std::vector<int> region(static_cast<std::size_t>(g.grid) * g.grid);
      for (int i = 0; i < g.grid; ++i)
        for (int j = 0; j < g.grid; ++j)
          region[static_cast<std::size_t>(i * g.grid + j)] = region_of(i) * 3 + region_of(j);
      g.shift_masks.resize(static_cast<std::size_t>(g.nw));
      for (int w = 0; w < g.nw; ++w) {
        const int wi = w / per_side, wj = w % per_side;
        std::vector<int> r(static_cast<std::size_t>(g.n));
        bool mixed = false;
        for (int ti = 0; ti < g.window; ++ti)
          for (int tj = 0; tj < g.window; ++tj) {
            r[static_cast<std::size_t>(ti * g.window + tj)] =
                region[static_cast<std::size_t>((wi * g.window + ti) * g.grid + wj * g.window + tj)];
            mixed = mixed || r[static_cast<std::size_t>(ti * g.window + tj)] != r[0];
          }
        if (!mixed) continue;
        Mat<T>& mask = g.shift_masks[static_cast<std::size_t>(w)];
        mask.setZero(g.n, g.n);
        for (int a = 0; a < g.n; ++a)
          for (int b = 0; b < g.n; ++b)
            if (r[static_cast<std::size_t>(a)] != r[static_cast<std::size_t>(b)]) mask(a, b) = T(-100);
      }
    }
    geometry_.push_back(std::move(g));
  }
}

template <class T>
Mat<T> SwinModel<T>::extract_patches(const ModelInput& input) const {
  const int p = config_.patch_size;
  const int side = config_.input_side;
  for (const auto& ch : input.pixels)
    if (ch.rows() != side || ch.cols() != side)
      throw InputError("model input must be " + std::to_string(side) + "x" + std::to_string(side));
  const int g = side / p;
  Mat<T> patches(Index(g) * g, Index(p) * p * 3);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const Index row = Index(i) * g + j;
      for (int c = 0; c < 3; ++c)
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj)
            patches(row, Index(c) * p * p + pi * p + pj) =
                static_cast<T>(input.pixels[static_cast<std::size_t>(c)](i * p + pi, j * p + pj));
    }
  return patches;
}

template <class T>
ClassifierOutput<T> SwinModel<T>::forward(const ModelInput& input, const RecordOptions& record,
                                          SwinCache<T>* cache, const AttnLogitOffsets<T>* offsets,
                                          Rng* train_rng) const {
  SwinCache<T> local;
  SwinCache<T>& cc = cache ? *cache : local;
  cc.blocks.assign(static_cast<std::size_t>(config_.total_blocks()), typename SwinCache<T>::Block{});
  cc.merges.assign(3, typename SwinCache<T>::Merge{});

  ClassifierOutput<T> out;
  out.positive_index = config_.positive_class_index();

  cc.patches = extract_patches(input);
  Mat<T> x;
  {
    Mat<T> embedded = cc.patches * params_.patch_weight;
    embedded.rowwise() += params_.patch_bias.transpose();
    detail::layer_norm_forward(embedded, params_.embed_ln_gamma, params_.embed_ln_beta, x,
                               cc.embed_ln_xhat, cc.embed_ln_inv_sigma);
  }

  const bool training = train_rng != nullptr;
  auto dropout_mask = [&](Index rows, Index cols) {
    Mat<T> mask;
    if (training && config_.dropout > 0.f) {
      mask.resize(rows, cols);
      const T scale = T(1) / (T(1) - static_cast<T>(config_.dropout));
      for (Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = train_rng->bernoulli(config_.dropout) ? T(0) : scale;
    }
    return mask;
  };
  auto drop_path_scale = [&]() {
    if (!training || config_.drop_path <= 0.f) return T(1);
    return train_rng->bernoulli(config_.drop_path) ? T(0)
                                                   : T(1) / (T(1) - static_cast<T>(config_.drop_path));
  };

  int block_index = 0;
  for (int l = 0; l < 4; ++l) {
    const auto& geo = geometry_[static_cast<std::size_t>(l)];
    const int c = config_.layer_dim(l);
    const int heads = config_.num_heads[static_cast<std::size_t>(l)];
    const int dh = c / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    for (int d = 0; d < config_.depths[static_cast<std::size_t>(l)]; ++d, ++block_index) {
      const bool shifted = (d % 2 == 1);
      const int shift = shifted ? geo.shift : 0;
      const auto& src = shift > 0 ? geo.src_shifted : geo.src_regular;
      const auto& bp = params_.blocks[static_cast<std::size_t>(block_index)];
      auto& bc = cc.blocks[static_cast<std::size_t>(block_index)];

      bc.x_in = x;
      Mat<T> ln_out;
      detail::layer_norm_forward(x, bp.ln1_gamma, bp.ln1_beta, ln_out, bc.ln1_xhat,
                                 bc.ln1_inv_sigma);

      bc.attn_in_wm.resize(ln_out.rows(), ln_out.cols());
      for (Index pidx = 0; pidx < ln_out.rows(); ++pidx)
        bc.attn_in_wm.row(pidx) = ln_out.row(src[static_cast<std::size_t>(pidx)]);

      bc.qkv_wm.noalias() = bc.attn_in_wm * bp.w_qkv;
      bc.qkv_wm.rowwise() += bp.b_qkv.transpose();

      // Bias matrices are shared across windows; build once per block.
      std::vector<Mat<T>> bias(static_cast<std::size_t>(heads));
      for (int h = 0; h < heads; ++h) {
        bias[static_cast<std::size_t>(h)].resize(geo.n, geo.n);
        for (int a = 0; a < geo.n; ++a)
          for (int b = 0; b < geo.n; ++b)
            bias[static_cast<std::size_t>(h)](a, b) = bp.bias_table(geo.rel_index(a, b), h);
      }

      bc.attn.assign(static_cast<std::size_t>(geo.nw * heads), Mat<T>());
      bc.attn_out_wm.resize(ln_out.rows(), c);
      for (int w = 0; w < geo.nw; ++w) {
        const Index r0 = Index(w) * geo.n;
        const Mat<T>* mask = nullptr;
        if (shift > 0 && geo.shift_masks[static_cast<std::size_t>(w)].size() != 0)
          mask = &geo.shift_masks[static_cast<std::size_t>(w)];
        for (int h = 0; h < heads; ++h) {
          auto q = bc.qkv_wm.block(r0, Index(h) * dh, geo.n, dh);
          auto k = bc.qkv_wm.block(r0, Index(c) + h * dh, geo.n, dh);
          auto v = bc.qkv_wm.block(r0, Index(2) * c + h * dh, geo.n, dh);
          Mat<T> s = q * k.transpose() * scale + bias[static_cast<std::size_t>(h)];
          if (mask) s += *mask;
          if (offsets && offsets->block_index == block_index)
            s += offsets->per_window_head[static_cast<std::size_t>(w * heads + h)];
          softmax_rows(s);
          bc.attn_out_wm.block(r0, Index(h) * dh, geo.n, dh).noalias() = s * v;
          bc.attn[static_cast<std::size_t>(w * heads + h)] = std::move(s);
        }
      }

      Mat<T> proj_wm = bc.attn_out_wm * bp.w_proj;
      proj_wm.rowwise() += bp.b_proj.transpose();
      bc.proj_dropout = dropout_mask(proj_wm.rows(), proj_wm.cols());
      if (bc.proj_dropout.size()) proj_wm = proj_wm.cwiseProduct(bc.proj_dropout);
      bc.drop_path_attn = drop_path_scale();

      bc.x_res = bc.x_in;
      for (Index pidx = 0; pidx < proj_wm.rows(); ++pidx)
        bc.x_res.row(src[static_cast<std::size_t>(pidx)]) += bc.drop_path_attn * proj_wm.row(pidx);

      detail::layer_norm_forward(bc.x_res, bp.ln2_gamma, bp.ln2_beta, bc.mlp_in, bc.ln2_xhat,
                                 bc.ln2_inv_sigma);
      bc.mlp_pre.noalias() = bc.mlp_in * bp.w_fc1;
      bc.mlp_pre.rowwise() += bp.b_fc1.transpose();
      bc.mlp_hidden = bc.mlp_pre.unaryExpr([](T v) { return detail::gelu_scalar(v); });
      bc.hidden_dropout = dropout_mask(bc.mlp_hidden.rows(), bc.mlp_hidden.cols());
      if (bc.hidden_dropout.size()) bc.mlp_hidden = bc.mlp_hidden.cwiseProduct(bc.hidden_dropout);
      Mat<T> mlp_out = bc.mlp_hidden * bp.w_fc2;
      mlp_out.rowwise() += bp.b_fc2.transpose();
      bc.out_dropout = dropout_mask(mlp_out.rows(), mlp_out.cols());
      if (bc.out_dropout.size()) mlp_out = mlp_out.cwiseProduct(bc.out_dropout);
      bc.drop_path_mlp = drop_path_scale();
      bc.x_out = bc.x_res + bc.drop_path_mlp * mlp_out;
      x = bc.x_out;

      if (record.attention) {
        BlockTrace t;
        t.block_index = block_index;
        t.layer_index = l + 1;
        t.shifted = shifted;
        t.grid = geo.grid;
        t.window = geo.window;
        t.shift = shift;
        t.heads = heads;
        t.tokens_per_window = geo.n;
        t.weights.reserve(bc.attn.size());
        for (const auto& a : bc.attn) t.weights.push_back(a.template cast<double>());
        out.trace.blocks.push_back(std::move(t));
      }
    }

    if (l < 3) {
      // 2x2 neighborhoods concatenate (even-even, odd-even, even-odd, odd-odd)
      // and project from 4C to 2C.
      const int g_in = geo.grid;
      const int g_out = g_in / 2;
      auto& mc = cc.merges[static_cast<std::size_t>(l)];
      mc.gathered.resize(Index(g_out) * g_out, Index(4) * c);
      for (int i = 0; i < g_out; ++i)
        for (int j = 0; j < g_out; ++j) {
          const Index row = Index(i) * g_out + j;
          mc.gathered.block(row, 0, 1, c) = x.row((2 * i) * g_in + 2 * j);
          mc.gathered.block(row, c, 1, c) = x.row((2 * i + 1) * g_in + 2 * j);
          mc.gathered.block(row, 2 * c, 1, c) = x.row((2 * i) * g_in + 2 * j + 1);
          mc.gathered.block(row, 3 * c, 1, c) = x.row((2 * i + 1) * g_in + 2 * j + 1);
        }
      const auto& mp = params_.merges[static_cast<std::size_t>(l)];
      Mat<T> ln_out;
      detail::layer_norm_forward(mc.gathered, mp.ln_gamma, mp.ln_beta, ln_out, mc.ln_xhat,
                                 mc.ln_inv_sigma);
      x.noalias() = ln_out * mp.reduction;
    }
  }

  cc.final_tokens = x;
  if (record.features) out.final_features = x.template cast<double>();

  Mat<T> ln_out;
  detail::layer_norm_forward(x, params_.head_ln_gamma, params_.head_ln_beta, ln_out,
                             cc.head_ln_xhat, cc.head_ln_inv_sigma);
  cc.pooled = ln_out.colwise().mean().transpose();
  out.logits = params_.head_weight.transpose() * cc.pooled + params_.head_bias;
  out.y1 = out.logits(out.positive_index);
  cc.valid = true;
  return out;
}

template <class T>
void SwinModel<T>::backward(const SwinCache<T>& cache, const Vec<T>& dlogits,
                            SwinParams<T>* grads, ClassifierOutput<T>* out) const {
  if (!cache.valid) throw StateError("backward requires a recorded forward cache");
  if (dlogits.size() != config_.num_classes) throw InputError("dlogits length mismatch");

  const bool want_trace = out != nullptr && !out->trace.empty();
  if (out && !out->trace.empty() &&
      out->trace.blocks.size() != static_cast<std::size_t>(config_.total_blocks()))
    throw StateError("trace does not match this model's block count");

  // Head.
  if (grads) {
    grads->head_weight.noalias() += cache.pooled * dlogits.transpose();
    grads->head_bias.noalias() += dlogits;
  }
  Vec<T> dpooled = params_.head_weight * dlogits;
  const Index t4 = cache.final_tokens.rows();
  Mat<T> dln(t4, cache.final_tokens.cols());
  for (Index i = 0; i < t4; ++i) dln.row(i) = dpooled.transpose() / static_cast<T>(t4);
  Mat<T> dx = detail::layer_norm_backward(dln, cache.head_ln_xhat, cache.head_ln_inv_sigma,
                                          params_.head_ln_gamma,
                                          grads ? &grads->head_ln_gamma : nullptr,
                                          grads ? &grads->head_ln_beta : nullptr);
  if (out && out->final_features.size() != 0) out->final_feature_grads = dx.template cast<double>();

  int block_index = config_.total_blocks() - 1;
  for (int l = 3; l >= 0; --l) {
    const auto& geo = geometry_[static_cast<std::size_t>(l)];
    const int c = config_.layer_dim(l);
    const int heads = config_.num_heads[static_cast<std::size_t>(l)];
    const int dh = c / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    if (l < 3) {
      // Undo the merge that follows layer l.
      const auto& mp = params_.merges[static_cast<std::size_t>(l)];
      const auto& mc = cache.merges[static_cast<std::size_t>(l)];
      if (grads) {
        Mat<T> ln_out = mc.ln_xhat;
        ln_out.array().rowwise() *= mp.ln_gamma.transpose().array();
        ln_out.rowwise() += mp.ln_beta.transpose();
        grads->merges[static_cast<std::size_t>(l)].reduction.noalias() += ln_out.transpose() * dx;
      }
      Mat<T> dln_out = dx * mp.reduction.transpose();
      Mat<T> dgathered = detail::layer_norm_backward(
          dln_out, mc.ln_xhat, mc.ln_inv_sigma, mp.ln_gamma,
          grads ? &grads->merges[static_cast<std::size_t>(l)].ln_gamma : nullptr,
          grads ? &grads->merges[static_cast<std::size_t>(l)].ln_beta : nullptr);
      const int g_in = geo.grid;
      const int g_out = g_in / 2;
      dx.resize(Index(g_in) * g_in, c);
      for (int i = 0; i < g_out; ++i)
        for (int j = 0; j < g_out; ++j) {
          const Index row = Index(i) * g_out + j;
          dx.row((2 * i) * g_in + 2 * j) = dgathered.block(row, 0, 1, c);
          dx.row((2 * i + 1) * g_in + 2 * j) = dgathered.block(row, c, 1, c);
          dx.row((2 * i) * g_in + 2 * j + 1) = dgathered.block(row, 2 * c, 1, c);
          dx.row((2 * i + 1) * g_in + 2 * j + 1) = dgathered.block(row, 3 * c, 1, c);
        }
    }

    for (int d = config_.depths[static_cast<std::size_t>(l)] - 1; d >= 0; --d, --block_index) {
      const bool shifted = (d % 2 == 1);
      const int shift = shifted ? geo.shift : 0;
      const auto& src = shift > 0 ? geo.src_shifted : geo.src_regular;
      const auto& bp = params_.blocks[static_cast<std::size_t>(block_index)];
      const auto& bc = cache.blocks[static_cast<std::size_t>(block_index)];
      auto* bg = grads ? &grads->blocks[static_cast<std::size_t>(block_index)] : nullptr;

      // MLP branch.
      Mat<T> dmlp_out = dx * bc.drop_path_mlp;
      if (bc.out_dropout.size()) dmlp_out = dmlp_out.cwiseProduct(bc.out_dropout);
      if (bg) {
        bg->w_fc2.noalias() += bc.mlp_hidden.transpose() * dmlp_out;
        bg->b_fc2.noalias() += dmlp_out.colwise().sum().transpose();
      }
      Mat<T> dhidden = dmlp_out * bp.w_fc2.transpose();
      if (bc.hidden_dropout.size()) dhidden = dhidden.cwiseProduct(bc.hidden_dropout);
      Mat<T> dpre =
          dhidden.cwiseProduct(bc.mlp_pre.unaryExpr([](T v) { return detail::gelu_grad_scalar(v); }));
      if (bg) {
        bg->w_fc1.noalias() += bc.mlp_in.transpose() * dpre;
        bg->b_fc1.noalias() += dpre.colwise().sum().transpose();
      }
      Mat<T> dmlp_in = dpre * bp.w_fc1.transpose();
      Mat<T> dx_res = dx + detail::layer_norm_backward(dmlp_in, bc.ln2_xhat, bc.ln2_inv_sigma,
                                                       bp.ln2_gamma, bg ? &bg->ln2_gamma : nullptr,
                                                       bg ? &bg->ln2_beta : nullptr);

      // Attention branch.
      Mat<T> dproj_wm(dx_res.rows(), c);
      for (Index pidx = 0; pidx < dproj_wm.rows(); ++pidx)
        dproj_wm.row(pidx) = dx_res.row(src[static_cast<std::size_t>(pidx)]) * bc.drop_path_attn;
      if (bc.proj_dropout.size()) dproj_wm = dproj_wm.cwiseProduct(bc.proj_dropout);
      if (bg) {
        bg->w_proj.noalias() += bc.attn_out_wm.transpose() * dproj_wm;
        bg->b_proj.noalias() += dproj_wm.colwise().sum().transpose();
      }
      Mat<T> dattn_out = dproj_wm * bp.w_proj.transpose();

      Mat<T> dqkv = Mat<T>::Zero(bc.qkv_wm.rows(), bc.qkv_wm.cols());
      BlockTrace* tb = want_trace ? &out->trace.blocks[static_cast<std::size_t>(block_index)] : nullptr;
      if (tb && !tb->has_grads) tb->grads.assign(bc.attn.size(), MatD());

      for (int w = 0; w < geo.nw; ++w) {
        const Index r0 = Index(w) * geo.n;
        for (int h = 0; h < heads; ++h) {
          const Mat<T>& a = bc.attn[static_cast<std::size_t>(w * heads + h)];
          auto q = bc.qkv_wm.block(r0, Index(h) * dh, geo.n, dh);
          auto k = bc.qkv_wm.block(r0, Index(c) + h * dh, geo.n, dh);
          auto v = bc.qkv_wm.block(r0, Index(2) * c + h * dh, geo.n, dh);
          auto d_out_h = dattn_out.block(r0, Index(h) * dh, geo.n, dh);

          Mat<T> da = d_out_h * v.transpose();
          if (tb) tb->grads[static_cast<std::size_t>(w * heads + h)] = da.template cast<double>();
          dqkv.block(r0, Index(2) * c + h * dh, geo.n, dh).noalias() = a.transpose() * d_out_h;

          // Softmax backward.
          Vec<T> rowdot = (a.cwiseProduct(da)).rowwise().sum();
          Mat<T> ds = a.cwiseProduct(da - rowdot * Mat<T>::Ones(1, geo.n));
          if (bg) {
            for (int qi = 0; qi < geo.n; ++qi)
              for (int ki = 0; ki < geo.n; ++ki)
                bg->bias_table(geo.rel_index(qi, ki), h) += ds(qi, ki);
          }
          dqkv.block(r0, Index(h) * dh, geo.n, dh).noalias() = ds * k * scale;
          dqkv.block(r0, Index(c) + h * dh, geo.n, dh).noalias() = ds.transpose() * q * scale;
        }
      }
      if (tb) tb->has_grads = true;

      if (bg) {
        bg->w_qkv.noalias() += bc.attn_in_wm.transpose() * dqkv;
        bg->b_qkv.noalias() += dqkv.colwise().sum().transpose();
      }
      Mat<T> dattn_in_wm = dqkv * bp.w_qkv.transpose();
      Mat<T> dln_out(dattn_in_wm.rows(), c);
      for (Index pidx = 0; pidx < dattn_in_wm.rows(); ++pidx)
        dln_out.row(src[static_cast<std::size_t>(pidx)]) = dattn_in_wm.row(pidx);

      dx = dx_res + detail::layer_norm_backward(dln_out, bc.ln1_xhat, bc.ln1_inv_sigma,
                                                bp.ln1_gamma, bg ? &bg->ln1_gamma : nullptr,
                                                bg ? &bg->ln1_beta : nullptr);
    }
  }

  // Patch embedding.
  Mat<T> dembedded = detail::layer_norm_backward(dx, cache.embed_ln_xhat, cache.embed_ln_inv_sigma,
                                                 params_.embed_ln_gamma,
                                                 grads ? &grads->embed_ln_gamma : nullptr,
                                                 grads ? &grads->embed_ln_beta : nullptr);
  if (grads) {
    grads->patch_weight.noalias() += cache.patches.transpose() * dembedded;
    grads->patch_bias.noalias() += dembedded.colwise().sum().transpose();
  }
}

template <class T>
void SwinModel<T>::backward_positive_class(const SwinCache<T>& cache,
                                           ClassifierOutput<T>& out) const {
  if (out.trace.empty() && out.final_features.size() == 0)
    throw StateError("backward_positive_class requires a forward pass with recording enabled");
  Vec<T> dlogits = Vec<T>::Zero(config_.num_classes);
  dlogits(out.positive_index) = T(1);
  backward(cache, dlogits, nullptr, &out);
}

}  // namespace attnseg
