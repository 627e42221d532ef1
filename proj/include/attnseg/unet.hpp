#pragma once

#include <string>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"
#include "attnseg/imaging.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/swin.hpp"  // ParamRef

namespace attnseg {

struct UNetConfig {
  int hierarchies = 4;
  int base_channels = 16;
  int in_channels = 3;
  int input_side = 384;

  void validate() const {
    if (hierarchies < 1) throw ConfigError("unet needs at least one hierarchy");
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (input_side <= 0 || input_side % (1 << hierarchies) != 0)
      throw ConfigError("input side must be divisible by 2^hierarchies");
  }

  int level_channels(int level) const { return base_channels << level; }
  int level_side(int level) const { return input_side >> level; }

  static UNetConfig desk_scale() {
    UNetConfig c;
    c.base_channels = 8;
    c.input_side = 96;
    return c;
  }
};

std::string unet_config_to_json(const UNetConfig& config);
UNetConfig unet_config_from_json(const std::string& json_text);

namespace detail {

/// Feature maps are [H*W x C], pixels row-major. 3x3 taps gather with zero
/// padding; column block t*C..t*C+C-1 holds tap t = (di+1)*3 + (dj+1).
template <class T>
Mat<T> im2col3(const Mat<T>& x, int h, int w) {
  const Index c = x.cols();
  Mat<T> col = Mat<T>::Zero(Index(h) * w, 9 * c);
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const Index t = Index(di + 1) * 3 + (dj + 1);
      for (int i = 0; i < h; ++i) {
        const int si = i + di;
        if (si < 0 || si >= h) continue;
        const int j0 = std::max(0, -dj), j1 = w - std::max(0, dj);
        if (j1 <= j0) continue;
        col.block(Index(i) * w + j0, t * c, j1 - j0, c) =
            x.block(Index(si) * w + j0 + dj, 0, j1 - j0, c);
      }
    }
  return col;
}

template <class T>
void col2im3_add(const Mat<T>& dcol, int h, int w, Mat<T>& dx) {
  const Index c = dx.cols();
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const Index t = Index(di + 1) * 3 + (dj + 1);
      for (int i = 0; i < h; ++i) {
        const int si = i + di;
        if (si < 0 || si >= h) continue;
        const int j0 = std::max(0, -dj), j1 = w - std::max(0, dj);
        if (j1 <= j0) continue;
        dx.block(Index(si) * w + j0 + dj, 0, j1 - j0, c) +=
            dcol.block(Index(i) * w + j0, t * c, j1 - j0, c);
      }
    }
}

/// Per-image, per-channel normalization over the pixel axis (columns hold
/// channels). Keeps activations in range so deep ReLU stacks stay alive.
template <class T>
void instance_norm_forward(const Mat<T>& x, const Vec<T>& gamma, const Vec<T>& beta, Mat<T>& y,
                           Mat<T>& xhat, Vec<T>& inv_sigma) {
  const T eps = T(1e-5);
  const Index n = x.rows();
  xhat.resize(x.rows(), x.cols());
  y.resize(x.rows(), x.cols());
  inv_sigma.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const T mu = x.col(c).mean();
    const T var = (x.col(c).array() - mu).square().sum() / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_sigma(c) = inv;
    xhat.col(c) = (x.col(c).array() - mu) * inv;
    y.col(c) = xhat.col(c) * gamma(c) + Vec<T>::Constant(n, beta(c));
  }
}

template <class T>
Mat<T> instance_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const Vec<T>& inv_sigma,
                              const Vec<T>& gamma, Vec<T>& dgamma, Vec<T>& dbeta) {
  const Index n = dy.rows();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Index c = 0; c < dy.cols(); ++c) {
    Eigen::Array<T, Eigen::Dynamic, 1> dxhat = dy.col(c).array() * gamma(c);
    const T m1 = dxhat.mean();
    const T m2 = (dxhat * xhat.col(c).array()).mean();
    dx.col(c) = (inv_sigma(c) * (dxhat - m1 - xhat.col(c).array() * m2)).matrix();
    dgamma(c) += (dy.col(c).array() * xhat.col(c).array()).sum();
    dbeta(c) += dy.col(c).sum();
  }
  (void)n;
  return dx;
}

}  // namespace detail

template <class T>
struct UNetCache {
  struct Conv {
    Mat<T> col;        // cached im2col input (training only)
    Mat<T> pre;        // pre-ReLU activation (post-norm when the conv is normalized)
    Mat<T> norm_xhat;  // instance-norm internals
    Vec<T> norm_inv_sigma;
  };
  std::vector<Conv> convs;          // in forward order
  std::vector<Grid<int>> pool_arg;  // per level, argmax source row per (out pixel, channel)
  std::vector<Mat<T>> enc_feat;     // skip features per level
  Mat<T> logits;                    // [HW x 1]
  Mat<T> probs;
  bool training = false;
  bool valid = false;
};

/// Gradient buffers aligned with UNet::parameters() order.
template <class T>
struct UNetGrads {
  std::vector<Mat<T>> w;
  std::vector<Vec<T>> b;
  std::vector<Vec<T>> gamma;  // empty for unnormalized convs
  std::vector<Vec<T>> beta;
};

/// Encoder-decoder segmentation network: double 3x3 conv + ReLU per level,
/// 2x2 max pooling, nearest upsampling with a 3x3 projection, skip
/// concatenation, logistic output.
template <class T>
class UNet {
 public:
  UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const int hh = config_.hierarchies;
    auto add_conv = [&](const std::string& name, int in_c, int out_c, int k) {
      ConvDef d;
      d.name = name;
      d.in_c = in_c;
      d.out_c = out_c;
      d.k = k;
      d.normed = k == 3;  // every 3x3 conv is normalized; the 1x1 head is not
      d.w.resize(Index(k) * k * in_c, out_c);
      d.b = Vec<T>::Zero(out_c);
      if (d.normed) {
        d.gamma = Vec<T>::Ones(out_c);
        d.beta = Vec<T>::Zero(out_c);
      }
      convs_.push_back(std::move(d));
    };
    for (int e = 0; e < hh; ++e) {
      const int in_c = e == 0 ? config_.in_channels : config_.level_channels(e - 1);
      const int c = config_.level_channels(e);
      add_conv("enc" + std::to_string(e) + ".conv1", in_c, c, 3);
      add_conv("enc" + std::to_string(e) + ".conv2", c, c, 3);
    }
    add_conv("bottleneck.conv1", config_.level_channels(hh - 1), config_.level_channels(hh), 3);
    add_conv("bottleneck.conv2", config_.level_channels(hh), config_.level_channels(hh), 3);
    for (int e = hh - 1; e >= 0; --e) {
      const int c = config_.level_channels(e);
      add_conv("dec" + std::to_string(e) + ".up", config_.level_channels(e + 1), c, 3);
      add_conv("dec" + std::to_string(e) + ".conv1", 2 * c, c, 3);
      add_conv("dec" + std::to_string(e) + ".conv2", c, c, 3);
    }
    add_conv("out.conv", config_.base_channels, 1, 1);

    Rng rng(seed);
    for (auto& d : convs_) {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(d.w.rows()));
      for (Index i = 0; i < d.w.size(); ++i)
        d.w.data()[i] = static_cast<T>(rng.normal(0.0, std_dev));
    }
  }

  const UNetConfig& config() const { return config_; }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (auto& d : convs_) {
      out.push_back({d.name + ".weight", d.w.data(), d.w.size(), true});
      out.push_back({d.name + ".bias", d.b.data(), d.b.size(), false});
      if (d.normed) {
        out.push_back({d.name + ".norm.gamma", d.gamma.data(), d.gamma.size(), false});
        out.push_back({d.name + ".norm.beta", d.beta.data(), d.beta.size(), false});
      }
    }
    return out;
  }

  void set_zero() {
    for (auto& d : convs_) {
      d.w.setZero();
      d.b.setZero();
      if (d.normed) {
        d.gamma.setZero();
        d.beta.setZero();
      }
    }
  }

  /// Per-pixel foreground probabilities at input resolution.
  Grid<T> forward(const ModelInput& input, UNetCache<T>* cache = nullptr) const {
    const int side = config_.input_side;
    for (const auto& ch : input.pixels)
      if (ch.rows() != side || ch.cols() != side)
        throw InputError("unet input must be " + std::to_string(side) + "x" + std::to_string(side));
    Mat<T> x(Index(side) * side, config_.in_channels);
    for (int c = 0; c < config_.in_channels; ++c)
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
          x(Index(i) * side + j, c) = static_cast<T>(input.pixels[static_cast<std::size_t>(c)](i, j));

    UNetCache<T> local;
    UNetCache<T>& cc = cache ? *cache : local;
    cc.training = cache != nullptr;
    cc.convs.assign(convs_.size(), typename UNetCache<T>::Conv{});
    cc.pool_arg.assign(static_cast<std::size_t>(config_.hierarchies), Grid<int>());
    cc.enc_feat.assign(static_cast<std::size_t>(config_.hierarchies), Mat<T>());

    const int hh = config_.hierarchies;
    std::size_t ci = 0;
    for (int e = 0; e < hh; ++e) {
      const int s = config_.level_side(e);
      x = run_conv(ci++, x, s, s, cc, true);
      x = run_conv(ci++, x, s, s, cc, true);
      cc.enc_feat[static_cast<std::size_t>(e)] = x;
      x = max_pool2(x, s, cc.pool_arg[static_cast<std::size_t>(e)]);
    }
    {
      const int s = config_.level_side(hh);
      x = run_conv(ci++, x, s, s, cc, true);
      x = run_conv(ci++, x, s, s, cc, true);
    }
    for (int e = hh - 1; e >= 0; --e) {
      const int s = config_.level_side(e);
      x = upsample2(x, s / 2);
      x = run_conv(ci++, x, s, s, cc, true);
      Mat<T> cat(x.rows(), x.cols() + cc.enc_feat[static_cast<std::size_t>(e)].cols());
      cat << x, cc.enc_feat[static_cast<std::size_t>(e)];
      x = run_conv(ci++, cat, s, s, cc, true);
      x = run_conv(ci++, x, s, s, cc, true);
    }
    cc.logits = run_conv(ci++, x, side, side, cc, false);
    cc.probs = cc.logits.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
    cc.valid = true;

    Grid<T> out(side, side);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) out(i, j) = cc.probs(Index(i) * side + j, 0);
    return out;
  }

  /// Backprop from dL/dprobs (same layout as the forward output).
  void backward(const UNetCache<T>& cache, const Grid<T>& dprobs,
                std::vector<Mat<T>>& grad_w, std::vector<Vec<T>>& grad_b) const {
    if (!cache.valid || !cache.training) throw StateError("unet backward requires a training cache");
    if (grad_w.size() != convs_.size()) {
      grad_w.assign(convs_.size(), Mat<T>());
      grad_b.assign(convs_.size(), Vec<T>());
      for (std::size_t i = 0; i < convs_.size(); ++i) {
        grad_w[i] = Mat<T>::Zero(convs_[i].w.rows(), convs_[i].w.cols());
        grad_b[i] = Vec<T>::Zero(convs_[i].b.size());
      }
    }
    const int side = config_.input_side;
    Mat<T> dlogits(Index(side) * side, 1);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        const T p = cache.probs(Index(i) * side + j, 0);
        dlogits(Index(i) * side + j, 0) = dprobs(i, j) * p * (T(1) - p);
      }

    const int hh = config_.hierarchies;
    long ci = static_cast<long>(convs_.size()) - 1;
    Mat<T> dx = conv_backward(static_cast<std::size_t>(ci--), dlogits, side, side, cache, grad_w,
                              grad_b, false);

    std::vector<Mat<T>> dskip(static_cast<std::size_t>(hh));
    for (int e = 0; e < hh; ++e) {
      const int s = config_.level_side(e);
      dx = conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
      Mat<T> dcat =
          conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
      const int c = config_.level_channels(e);
      dskip[static_cast<std::size_t>(e)] = dcat.rightCols(c);
      dx = conv_backward(static_cast<std::size_t>(ci--), dcat.leftCols(c), s, s, cache, grad_w,
                         grad_b, true);
      dx = downsample2_sum(dx, s);
    }
    {
      const int s = config_.level_side(hh);
      dx = conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
      dx = conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
    }
    for (int e = hh - 1; e >= 0; --e) {
      const int s = config_.level_side(e);
      dx = pool_backward(dx, s, cache.pool_arg[static_cast<std::size_t>(e)],
                         config_.level_channels(e));
      dx += dskip[static_cast<std::size_t>(e)];
      dx = conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
      dx = conv_backward(static_cast<std::size_t>(ci--), dx, s, s, cache, grad_w, grad_b, true);
    }
  }

 private:
  struct ConvDef {
    std::string name;
    Mat<T> w;
    Vec<T> b;
    int in_c = 0, out_c = 0, k = 3;
  };

  UNetConfig config_;
  std::vector<ConvDef> convs_;

  Mat<T> run_conv(std::size_t idx, const Mat<T>& x, int h, int w, UNetCache<T>& cc,
                  bool relu) const {
    const auto& d = convs_[idx];
    Mat<T> col = d.k == 3 ? detail::im2col3(x, h, w) : x;
    Mat<T> pre = col * d.w;
    pre.rowwise() += d.b.transpose();
    Mat<T> out = relu ? pre.cwiseMax(T(0)).eval() : pre;
    if (cc.training) {
      cc.convs[idx].col = std::move(col);
      cc.convs[idx].pre = std::move(pre);
    }
    return out;
  }

  Mat<T> conv_backward(std::size_t idx, const Mat<T>& dout_in, int h, int w,
                       const UNetCache<T>& cc, std::vector<Mat<T>>& grad_w,
                       std::vector<Vec<T>>& grad_b, bool relu) const {
    const auto& d = convs_[idx];
    const auto& cache = cc.convs[idx];
    Mat<T> dout = dout_in;
    if (relu)
      dout = dout.cwiseProduct(
          cache.pre.unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
    grad_w[idx].noalias() += cache.col.transpose() * dout;
    grad_b[idx].noalias() += dout.colwise().sum().transpose();
    Mat<T> dcol = dout * d.w.transpose();
    if (d.k == 1) return dcol;
    Mat<T> dx = Mat<T>::Zero(Index(h) * w, d.in_c);
    detail::col2im3_add(dcol, h, w, dx);
    return dx;
  }

  static Mat<T> max_pool2(const Mat<T>& x, int side, Grid<int>& argmax) {
    const int out_side = side / 2;
    const Index c = x.cols();
    Mat<T> out(Index(out_side) * out_side, c);
    argmax.resize(Index(out_side) * out_side, c);
    for (int i = 0; i < out_side; ++i)
      for (int j = 0; j < out_side; ++j) {
        const Index rows[4] = {Index(2 * i) * side + 2 * j, Index(2 * i) * side + 2 * j + 1,
                               Index(2 * i + 1) * side + 2 * j, Index(2 * i + 1) * side + 2 * j + 1};
        for (Index ch = 0; ch < c; ++ch) {
          T best = x(rows[0], ch);
          Index arg = rows[0];
          for (int k = 1; k < 4; ++k)
            if (x(rows[k], ch) > best) {
              best = x(rows[k], ch);
              arg = rows[k];
            }
          out(Index(i) * out_side + j, ch) = best;
          argmax(Index(i) * out_side + j, ch) = static_cast<int>(arg);
        }
      }
    return out;
  }

  static Mat<T> pool_backward(const Mat<T>& dout, int side, const Grid<int>& argmax, int channels) {
    Mat<T> dx = Mat<T>::Zero(Index(side) * side, channels);
    for (Index p = 0; p < dout.rows(); ++p)
      for (Index ch = 0; ch < dout.cols(); ++ch) dx(argmax(p, ch), ch) += dout(p, ch);
    return dx;
  }

  static Mat<T> upsample2(const Mat<T>& x, int in_side) {
    const int out_side = in_side * 2;
    Mat<T> out(Index(out_side) * out_side, x.cols());
    for (int i = 0; i < out_side; ++i)
      for (int j = 0; j < out_side; ++j)
        out.row(Index(i) * out_side + j) = x.row(Index(i / 2) * in_side + j / 2);
    return out;
  }

  static Mat<T> downsample2_sum(const Mat<T>& dout, int out_side) {
    const int in_side = out_side / 2;
    Mat<T> dx = Mat<T>::Zero(Index(in_side) * in_side, dout.cols());
    for (int i = 0; i < out_side; ++i)
      for (int j = 0; j < out_side; ++j)
        dx.row(Index(i / 2) * in_side + j / 2) += dout.row(Index(i) * out_side + j);
    return dx;
  }
};

}  // namespace attnseg
