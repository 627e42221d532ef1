#pragma once

#include <cmath>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"
#include "attnseg/swin.hpp"

namespace attnseg {

/// Adam with decoupled weight decay. Decay touches only tensors flagged
/// decay=true (weight matrices; biases, norm scales and position tables are
/// exempt).
template <class T>
class AdamW {
 public:
  struct Options {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.01);
  };

  explicit AdamW(Options opt) : opt_(opt) {}

  void step(const std::vector<ParamRef<T>>& params, const std::vector<ParamRef<T>>& grads) {
    if (params.size() != grads.size()) throw InputError("optimizer param/grad count mismatch");
    if (slots_.empty()) {
      slots_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m = Vec<T>::Zero(params[i].size);
        slots_[i].v = Vec<T>::Zero(params[i].size);
      }
    }
    ++step_;
    const T bc1 = T(1) - std::pow(opt_.beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(opt_.beta2, static_cast<T>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].size != grads[i].size) throw InputError("optimizer tensor size mismatch");
      Eigen::Map<Vec<T>> p(params[i].data, params[i].size);
      Eigen::Map<const Vec<T>> g(grads[i].data, grads[i].size);
      auto& s = slots_[i];
      s.m = opt_.beta1 * s.m + (T(1) - opt_.beta1) * g;
      s.v = opt_.beta2 * s.v.array().matrix() + (T(1) - opt_.beta2) * g.cwiseProduct(g);
      if (params[i].decay && opt_.weight_decay > T(0)) p -= opt_.lr * opt_.weight_decay * p;
      p.array() -= opt_.lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + opt_.eps);
    }
  }

  const Options& options() const { return opt_; }
  void set_lr(T lr) { opt_.lr = lr; }

 private:
  struct Slot {
    Vec<T> m, v;
  };
  Options opt_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace attnseg
