#pragma once

#include <functional>

#include "pkkd/tensor.hpp"

namespace pkkd {

/// Central-difference gradient oracle, always evaluated in 64-bit:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
/// f must be deterministic and produce a finite scalar at every probe.
template <class F>
Tensor<double> finite_diff_grad(F&& f, const Tensor<double>& x, double eps) {
  if (!(eps > 0)) throw TensorError("finite_diff_grad: eps must be positive");
  Tensor<double> grad(x.shape());
  Tensor<double> probe = x;
  for (Index i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    double hi = f(probe);
    probe[i] = x[i] - eps;
    double lo = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw TensorError("finite_diff_grad: non-finite evaluation at coordinate " +
                        std::to_string(i));
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

}  // namespace pkkd
