#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pkkd/model.hpp"
#include "pkkd/tape.hpp"

namespace pkkd {

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " out of range [0, " +
                            std::to_string(total_steps) + "]");
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

/// Rescales an adder filter gradient to l2 norm sqrt(numel), equalizing
/// update magnitudes across layers of different size.
template <class S>
void adaptive_adder_scale(Tensor<S>& grad) {
  double norm = std::sqrt(static_cast<double>(grad.array().template cast<double>().square().sum()));
  double factor = std::sqrt(static_cast<double>(grad.numel())) / (norm + 1e-12);
  grad.array() *= S(factor);
}

/// Shrinks a gradient to the given l2 norm when it exceeds it. The
/// exponential kernels can hand the alignment heads transiently enormous
/// gradients while the sigmas are still adapting to the preactivation scale;
/// clipping keeps those steps bounded without touching well-scaled ones.
template <class S>
void clip_grad_norm(Tensor<S>& grad, double max_norm) {
  double norm = std::sqrt(static_cast<double>(grad.array().template cast<double>().square().sum()));
  if (norm > max_norm) grad.array() *= S(max_norm / (norm + 1e-12));
}

/// SGD with momentum and decoupled-by-flag weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Batchnorm affine terms and log-sigma parameters are decay exempt.
template <class S>
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(S momentum, S weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void apply(Parameter<S>& p, const Tensor<S>& grad, S lr) {
    if (!p.learnable) return;
    if (!grad.same_shape(p.value))
      throw ShapeMismatchError("sgd: gradient shape " + shape_to_string(grad.shape()) +
                               " does not match parameter '" + p.name + "' " +
                               shape_to_string(p.value.shape()));
    auto [it, inserted] = velocity_.try_emplace(p.name, Tensor<S>::zeros(p.value.shape()));
    Tensor<S>& v = it->second;
    S wd = p.decay_exempt ? S(0) : weight_decay_;
    v.array() = momentum_ * v.array() + grad.array() + wd * p.value.array();
    p.value.array() -= lr * v.array();
  }

  S momentum() const { return momentum_; }
  S weight_decay() const { return weight_decay_; }
  std::map<std::string, Tensor<S>>& velocities() { return velocity_; }
  const std::map<std::string, Tensor<S>>& velocities() const { return velocity_; }

 private:
  S momentum_ = S(0.9);
  S weight_decay_ = S(1e-4);
  std::map<std::string, Tensor<S>> velocity_;
};

}  // namespace pkkd
