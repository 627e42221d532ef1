#pragma once

#include <cmath>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"

namespace attnseg {

inline constexpr double kProbFloor = 1e-7;

template <class T>
struct ScalarLoss {
  T loss = T(0);
  Vec<T> dlogits;
};

/// dL/dp_t for L = -(1 - p_t)^gamma * log(p_t), stable at gamma = 0 and p_t -> 1.
template <class T>
T focal_dldpt(T pt, T gamma) {
  if (gamma == T(0)) return -T(1) / pt;
  const T one_m = T(1) - pt;
  const T om = std::max(one_m, static_cast<T>(kProbFloor));
  return gamma * std::pow(om, gamma - T(1)) * std::log(pt) - std::pow(one_m, gamma) / pt;
}

/// Focal cross-entropy over softmax classes: -(1 - p_t)^gamma * log(p_t).
/// gamma = 0 reduces exactly to cross-entropy.
template <class T>
ScalarLoss<T> focal_ce_softmax(const Vec<T>& logits, int target, T gamma) {
  if (target < 0 || target >= logits.size()) throw InputError("focal loss: bad target index");
  const T mx = logits.maxCoeff();
  Vec<T> p = (logits.array() - mx).exp();
  p /= p.sum();
  const T pt = std::max(p(target), static_cast<T>(kProbFloor));
  const T one_m = T(1) - pt;
  ScalarLoss<T> r;
  r.loss = -std::pow(one_m, gamma) * std::log(pt);
  r.dlogits = focal_dldpt(pt, gamma) * pt * (-p);
  r.dlogits(target) += focal_dldpt(pt, gamma) * pt;
  return r;
}

/// Per-label logistic focal loss, averaged over labels. Targets are 0/1 flags.
template <class T>
ScalarLoss<T> focal_bce_multi(const Vec<T>& logits, const std::vector<std::uint8_t>& targets,
                              T gamma) {
  if (static_cast<Index>(targets.size()) != logits.size())
    throw InputError("focal loss: target count mismatch");
  ScalarLoss<T> r;
  r.dlogits = Vec<T>::Zero(logits.size());
  const T inv_n = T(1) / static_cast<T>(logits.size());
  for (Index i = 0; i < logits.size(); ++i) {
    const T p = T(1) / (T(1) + std::exp(-logits(i)));
    const bool y = targets[static_cast<std::size_t>(i)] != 0;
    const T pt = std::max(y ? p : T(1) - p, static_cast<T>(kProbFloor));
    r.loss += -std::pow(T(1) - pt, gamma) * std::log(pt) * inv_n;
    const T dptdz = (y ? T(1) : T(-1)) * p * (T(1) - p);
    r.dlogits(i) = focal_dldpt(pt, gamma) * dptdz * inv_n;
  }
  return r;
}

/// Single-logit binary focal loss (logistic output).
template <class T>
ScalarLoss<T> focal_bce_binary(T logit, int target, T gamma) {
  Vec<T> l(1);
  l(0) = logit;
  return focal_bce_multi<T>(l, {static_cast<std::uint8_t>(target != 0)}, gamma);
}

/// Soft Dice with +1 smoothing in numerator and denominator.
template <class T>
T soft_dice(const Mat<T>& pred, const MaskGrid& gt) {
  if (!same_shape(pred, gt)) throw InputError("dice loss: shape mismatch");
  const T eps = T(1);
  T inter = T(0), psum = T(0), gsum = T(0);
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      const T g = static_cast<T>(gt(i, j));
      inter += pred(i, j) * g;
      psum += pred(i, j);
      gsum += g;
    }
  return (T(2) * inter + eps) / (psum + gsum + eps);
}

/// (1 - soft Dice) + mean binary cross-entropy, equally weighted.
template <class T>
T dice_ce_loss(const Mat<T>& pred, const MaskGrid& gt) {
  if (!same_shape(pred, gt)) throw InputError("dice_ce_loss: shape mismatch");
  T ce = T(0);
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      const T p = std::clamp(pred(i, j), static_cast<T>(kProbFloor),
                             T(1) - static_cast<T>(kProbFloor));
      ce += gt(i, j) ? -std::log(p) : -std::log(T(1) - p);
    }
  ce /= static_cast<T>(pred.size());
  return (T(1) - soft_dice(pred, gt)) + ce;
}

/// dL/dpred for dice_ce_loss.
template <class T>
Mat<T> dice_ce_loss_grad(const Mat<T>& pred, const MaskGrid& gt) {
  if (!same_shape(pred, gt)) throw InputError("dice_ce_loss: shape mismatch");
  const T eps = T(1);
  T inter = T(0), psum = T(0), gsum = T(0);
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      const T g = static_cast<T>(gt(i, j));
      inter += pred(i, j) * g;
      psum += pred(i, j);
      gsum += g;
    }
  const T denom = psum + gsum + eps;
  const T num = T(2) * inter + eps;
  Mat<T> grad(pred.rows(), pred.cols());
  const T inv_n = T(1) / static_cast<T>(pred.size());
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      const T g = static_cast<T>(gt(i, j));
      // d(1 - dice)/dp = -(2g*denom - num) / denom^2
      const T ddice = -(T(2) * g * denom - num) / (denom * denom);
      const T p = std::clamp(pred(i, j), static_cast<T>(kProbFloor),
                             T(1) - static_cast<T>(kProbFloor));
      const T dce = (g != T(0) ? -T(1) / p : T(1) / (T(1) - p)) * inv_n;
      grad(i, j) = ddice + dce;
    }
  return grad;
}

}  // namespace attnseg
