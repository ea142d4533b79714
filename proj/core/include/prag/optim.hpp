#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace prag {

// A contiguous block of trainable scalars and its gradient.
template <typename T>
struct ParamSlot {
  T* value;
  T* grad;
  std::size_t size;
};

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping. max_norm <= 0 disables clipping.
template <typename T>
double clip_global_norm(const std::vector<ParamSlot<T>>& slots, double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots) {
    for (std::size_t i = 0; i < s.size; ++i) sq += double(s.grad[i]) * double(s.grad[i]);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (const auto& s : slots) {
      for (std::size_t i = 0; i < s.size; ++i) s.grad[i] *= factor;
    }
  }
  return norm;
}

// Decoupled-weight-decay Adam. State is keyed by slot order, so the same
// slot list must be passed on every step.
template <typename T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  explicit AdamW(Options options) : options_(options) {}

  void step(const std::vector<ParamSlot<T>>& slots, double lr) {
    if (m_.empty()) {
      for (const auto& s : slots) {
        m_.emplace_back(s.size, T(0));
        v_.emplace_back(s.size, T(0));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, t_);
    const double bc2 = 1.0 - std::pow(options_.beta2, t_);
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(options_.eps);
    const T decay = static_cast<T>(lr * options_.weight_decay);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto& s = slots[k];
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < s.size; ++i) {
        const T g = s.grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T denom = std::sqrt(v[i] * inv_bc2) + eps;
        if (decay != T(0)) s.value[i] -= decay * s.value[i];
        s.value[i] -= step_size * m[i] / denom;
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  Options options_;
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

// Plain gradient descent with the same slot interface.
template <typename T>
inline void sgd_step(const std::vector<ParamSlot<T>>& slots, double lr) {
  const T step = static_cast<T>(lr);
  for (const auto& s : slots) {
    for (std::size_t i = 0; i < s.size; ++i) s.value[i] -= step * s.grad[i];
  }
}

}  // namespace prag
