#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "pkkd/tape.hpp"
#include "pkkd/tensor.hpp"

namespace pkkd {

class ShapeMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KernelOverflowError : public std::runtime_error {
 public:
  KernelOverflowError(int layer_index, double max_arg)
      : std::runtime_error("kernel exponent overflow (max argument " + std::to_string(max_arg) +
                           " > 80) at tap layer " + std::to_string(layer_index)),
        layer_index(layer_index) {}
  int layer_index;
};

struct ConvGeom {
  Index kernel = 1;
  Index stride = 1;
  Index pad = 0;

  Index out_extent(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

struct PoolGeom {
  Index window = 2;
  Index stride = 2;
  Index pad = 0;

  Index out_extent(Index in) const { return (in + 2 * pad - window) / stride + 1; }
};

namespace detail {

template <class S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw ShapeMismatchError(std::string(op) + ": shape " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check_same_shape("add", a.value(), b.value());
  Tensor<S> out(a.value().shape(), a.value().array() + b.value().array());
  return a.tape->make("add", std::move(out), {a, b}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    t.accum_grad(n.parents[0], t.raw_grad(self));
    t.accum_grad(n.parents[1], t.raw_grad(self));
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check_same_shape("sub", a.value(), b.value());
  Tensor<S> out(a.value().shape(), a.value().array() - b.value().array());
  return a.tape->make("sub", std::move(out), {a, b}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    t.accum_grad(n.parents[0], g);
    t.accum_grad(n.parents[1], Tensor<S>(g.shape(), -g.array()));
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::check_same_shape("mul", a.value(), b.value());
  Tensor<S> out(a.value().shape(), a.value().array() * b.value().array());
  return a.tape->make("mul", std::move(out), {a, b}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    t.accum_grad(n.parents[0], Tensor<S>(g.shape(), g.array() * t.value(n.parents[1]).array()));
    t.accum_grad(n.parents[1], Tensor<S>(g.shape(), g.array() * t.value(n.parents[0]).array()));
  });
}

template <class S>
Var<S> scale(Var<S> a, S c) {
  Tensor<S> out(a.value().shape(), a.value().array() * c);
  return a.tape->make("scale", std::move(out), {a}, [c](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    t.accum_grad(n.parents[0], Tensor<S>(g.shape(), g.array() * c));
  });
}

template <class S>
Var<S> vexp(Var<S> a) {
  Tensor<S> out(a.value().shape(), a.value().array().exp());
  return a.tape->make("exp", std::move(out), {a}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    t.accum_grad(n.parents[0], Tensor<S>(g.shape(), g.array() * t.value(self).array()));
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  Tensor<S> out(a.value().shape(), a.value().array().max(S(0)));
  return a.tape->make("relu", std::move(out), {a}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    const auto& x = t.value(n.parents[0]).array();
    t.accum_grad(n.parents[0],
                 Tensor<S>(g.shape(), (x > S(0)).select(g.array(), FlatArray<S>::Zero(g.array().size()))));
  });
}

template <class S>
Var<S> sum(Var<S> a) {
  Tensor<S> out = Tensor<S>::scalar(a.value().array().sum());
  return a.tape->make("sum", std::move(out), {a}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    S g = t.raw_grad(self).item();
    t.accum_grad(n.parents[0], Tensor<S>::full(t.value(n.parents[0]).shape(), g));
  });
}

template <class S>
Var<S> mean(Var<S> a) {
  Index m = a.value().numel();
  Tensor<S> out = Tensor<S>::scalar(a.value().array().sum() / S(m));
  return a.tape->make("mean", std::move(out), {a}, [m](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    S g = t.raw_grad(self).item() / S(m);
    t.accum_grad(n.parents[0], Tensor<S>::full(t.value(n.parents[0]).shape(), g));
  });
}

template <class S>
Var<S> reshape(Var<S> a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  return a.tape->make("reshape", std::move(out), {a}, [](Tape<S>& t, int self) {
    const auto& n = t.node(self);
    t.accum_grad(n.parents[0], t.raw_grad(self).reshaped(t.value(n.parents[0]).shape()));
  });
}

// ---------------------------------------------------------------------------
// Convolution. Input [N,H,W,c_in], filter [d,d,c_in,c_out], zero padding.
// Accumulation per output element runs in (i,j,k) order so results agree
// bitwise with a direct nested-loop evaluation.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void check_conv_shapes(const char* op, const Tensor<S>& x, const Tensor<S>& f,
                       const ConvGeom& g) {
  if (x.rank() != 4) throw ShapeMismatchError(std::string(op) + ": input must be rank-4 NHWC");
  if (f.rank() != 4) throw ShapeMismatchError(std::string(op) + ": filter must be [d,d,cin,cout]");
  if (f.dim(0) != g.kernel || f.dim(1) != g.kernel)
    throw ShapeMismatchError(std::string(op) + ": filter extent does not match geometry");
  if (f.dim(2) != x.dim(3))
    throw ShapeMismatchError(std::string(op) + ": channel mismatch, input has " +
                             std::to_string(x.dim(3)) + " filter expects " +
                             std::to_string(f.dim(2)));
  if (g.out_extent(x.dim(1)) < 1 || g.out_extent(x.dim(2)) < 1)
    throw ShapeMismatchError(std::string(op) + ": empty output extent");
}

template <class S>
Tensor<S> conv2d_value(const Tensor<S>& x, const Tensor<S>& f, const S* bias, const ConvGeom& g) {
  const Index N = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
  const Index d = g.kernel, cout = f.dim(3);
  const Index Ho = g.out_extent(H), Wo = g.out_extent(W);
  Tensor<S> y({N, Ho, Wo, cout});
  const S* xp = x.data();
  const S* fp = f.data();
  S* yp = y.data();
  for (Index n = 0; n < N; ++n)
    for (Index u = 0; u < Ho; ++u)
      for (Index v = 0; v < Wo; ++v) {
        S* out = yp + ((n * Ho + u) * Wo + v) * cout;
        Index co = 0;
        for (; co + 4 <= cout; co += 4) {
          S a0 = bias ? bias[co] : S(0), a1 = bias ? bias[co + 1] : S(0);
          S a2 = bias ? bias[co + 2] : S(0), a3 = bias ? bias[co + 3] : S(0);
          for (Index i = 0; i < d; ++i) {
            Index yy = u * g.stride + i - g.pad;
            if (yy < 0 || yy >= H) continue;
            for (Index j = 0; j < d; ++j) {
              Index xx = v * g.stride + j - g.pad;
              if (xx < 0 || xx >= W) continue;
              const S* xr = xp + ((n * H + yy) * W + xx) * cin;
              const S* fr = fp + (i * d + j) * cin * cout + co;
              for (Index k = 0; k < cin; ++k, fr += cout) {
                S xv = xr[k];
                a0 += xv * fr[0];
                a1 += xv * fr[1];
                a2 += xv * fr[2];
                a3 += xv * fr[3];
              }
            }
          }
          out[co] = a0;
          out[co + 1] = a1;
          out[co + 2] = a2;
          out[co + 3] = a3;
        }
        for (; co < cout; ++co) {
          S acc = bias ? bias[co] : S(0);
          for (Index i = 0; i < d; ++i) {
            Index yy = u * g.stride + i - g.pad;
            if (yy < 0 || yy >= H) continue;
            for (Index j = 0; j < d; ++j) {
              Index xx = v * g.stride + j - g.pad;
              if (xx < 0 || xx >= W) continue;
              const S* xr = xp + ((n * H + yy) * W + xx) * cin;
              const S* fr = fp + (i * d + j) * cin * cout + co;
              for (Index k = 0; k < cin; ++k, fr += cout) acc += xr[k] * fr[0];
            }
          }
          out[co] = acc;
        }
      }
  return y;
}

}  // namespace detail

template <class S>
Var<S> conv2d(Var<S> x, Var<S> filter, ConvGeom g);

template <class S>
Var<S> conv2d(Var<S> x, Var<S> filter, std::optional<Var<S>> bias, ConvGeom g) {
  detail::check_conv_shapes("conv2d", x.value(), filter.value(), g);
  const S* bp = nullptr;
  if (bias) {
    if (bias->value().numel() != filter.value().dim(3))
      throw ShapeMismatchError("conv2d: bias length must equal c_out");
    bp = bias->value().data();
  }
  Tensor<S> y = detail::conv2d_value(x.value(), filter.value(), bp, g);
  std::vector<Var<S>> parents{x, filter};
  if (bias) parents.push_back(*bias);
  bool has_bias = bias.has_value();
  return x.tape->make("conv2d", std::move(y), std::move(parents),
                      [g, has_bias](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& x = t.value(node.parents[0]);
    const Tensor<S>& f = t.value(node.parents[1]);
    const Tensor<S>& dy = t.raw_grad(self);
    const Index N = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
    const Index d = g.kernel, cout = f.dim(3);
    const Index Ho = dy.dim(1), Wo = dy.dim(2);
    Tensor<S> dx(x.shape());
    Tensor<S> df(f.shape());
    for (Index n = 0; n < N; ++n)
      for (Index u = 0; u < Ho; ++u)
        for (Index v = 0; v < Wo; ++v)
          for (Index co = 0; co < cout; ++co) {
            S gv = dy(n, u, v, co);
            for (Index i = 0; i < d; ++i) {
              Index yy = u * g.stride + i - g.pad;
              if (yy < 0 || yy >= H) continue;
              for (Index j = 0; j < d; ++j) {
                Index xx = v * g.stride + j - g.pad;
                if (xx < 0 || xx >= W) continue;
                const S* xr = x.data() + ((n * H + yy) * W + xx) * cin;
                S* dxr = dx.data() + ((n * H + yy) * W + xx) * cin;
                const S* fr = f.data() + (i * d + j) * cin * cout + co;
                S* dfr = df.data() + (i * d + j) * cin * cout + co;
                for (Index k = 0; k < cin; ++k) {
                  dfr[k * cout] += xr[k] * gv;
                  dxr[k] += fr[k * cout] * gv;
                }
              }
            }
          }
    t.accum_grad(node.parents[0], std::move(dx));
    t.accum_grad(node.parents[1], std::move(df));
    if (has_bias) {
      Tensor<S> db({cout});
      for (Index n = 0; n < N; ++n)
        for (Index u = 0; u < Ho; ++u)
          for (Index v = 0; v < Wo; ++v)
            for (Index co = 0; co < cout; ++co) db[co] += dy(n, u, v, co);
      t.accum_grad(node.parents[2], std::move(db));
    }
  });
}

template <class S>
Var<S> conv2d(Var<S> x, Var<S> filter, ConvGeom g) {
  return conv2d(x, filter, std::optional<Var<S>>{}, g);
}

// ---------------------------------------------------------------------------
// Adder layer: negated l1 distance between patches and filters (zero padding
// contributes |0 - F|). The inner accumulation uses subtract/abs/add only.
// Backward uses the l2-style surrogate: dF accumulates (X - F) * upstream,
// dX accumulates clip(F - X, -1, 1) * upstream.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
Tensor<S> adder2d_value(const Tensor<S>& x, const Tensor<S>& f, const ConvGeom& g) {
  const Index N = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
  const Index d = g.kernel, cout = f.dim(3);
  const Index Ho = g.out_extent(H), Wo = g.out_extent(W);
  Tensor<S> y({N, Ho, Wo, cout});
  for (Index n = 0; n < N; ++n)
    for (Index u = 0; u < Ho; ++u)
      for (Index v = 0; v < Wo; ++v) {
        S* out = y.data() + ((n * Ho + u) * Wo + v) * cout;
        Index co = 0;
        for (; co + 4 <= cout; co += 4) {
          S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
          for (Index i = 0; i < d; ++i) {
            Index yy = u * g.stride + i - g.pad;
            bool row_in = yy >= 0 && yy < H;
            for (Index j = 0; j < d; ++j) {
              Index xx = v * g.stride + j - g.pad;
              bool in = row_in && xx >= 0 && xx < W;
              const S* xr = in ? x.data() + ((n * H + yy) * W + xx) * cin : nullptr;
              const S* fr = f.data() + (i * d + j) * cin * cout + co;
              for (Index k = 0; k < cin; ++k, fr += cout) {
                S xv = in ? xr[k] : S(0);
                a0 += std::abs(xv - fr[0]);
                a1 += std::abs(xv - fr[1]);
                a2 += std::abs(xv - fr[2]);
                a3 += std::abs(xv - fr[3]);
              }
            }
          }
          out[co] = -a0;
          out[co + 1] = -a1;
          out[co + 2] = -a2;
          out[co + 3] = -a3;
        }
        for (; co < cout; ++co) {
          S acc = 0;
          for (Index i = 0; i < d; ++i) {
            Index yy = u * g.stride + i - g.pad;
            bool row_in = yy >= 0 && yy < H;
            for (Index j = 0; j < d; ++j) {
              Index xx = v * g.stride + j - g.pad;
              bool in = row_in && xx >= 0 && xx < W;
              const S* xr = in ? x.data() + ((n * H + yy) * W + xx) * cin : nullptr;
              const S* fr = f.data() + (i * d + j) * cin * cout + co;
              for (Index k = 0; k < cin; ++k, fr += cout)
                acc += std::abs((in ? xr[k] : S(0)) - fr[0]);
            }
          }
          out[co] = -acc;
        }
      }
  return y;
}

}  // namespace detail

template <class S>
Var<S> adder2d(Var<S> x, Var<S> filter, ConvGeom g) {
  detail::check_conv_shapes("adder2d", x.value(), filter.value(), g);
  Tensor<S> y = detail::adder2d_value(x.value(), filter.value(), g);
  return x.tape->make("adder2d", std::move(y), {x, filter}, [g](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& x = t.value(node.parents[0]);
    const Tensor<S>& f = t.value(node.parents[1]);
    const Tensor<S>& dy = t.raw_grad(self);
    const Index N = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
    const Index d = g.kernel, cout = f.dim(3);
    const Index Ho = dy.dim(1), Wo = dy.dim(2);
    Tensor<S> dx(x.shape());
    Tensor<S> df(f.shape());
    for (Index n = 0; n < N; ++n)
      for (Index u = 0; u < Ho; ++u)
        for (Index v = 0; v < Wo; ++v)
          for (Index co = 0; co < cout; ++co) {
            S gv = dy(n, u, v, co);
            for (Index i = 0; i < d; ++i) {
              Index yy = u * g.stride + i - g.pad;
              bool row_in = yy >= 0 && yy < H;
              for (Index j = 0; j < d; ++j) {
                Index xx = v * g.stride + j - g.pad;
                bool in = row_in && xx >= 0 && xx < W;
                const S* xr = in ? x.data() + ((n * H + yy) * W + xx) * cin : nullptr;
                S* dxr = in ? dx.data() + ((n * H + yy) * W + xx) * cin : nullptr;
                const S* fr = f.data() + (i * d + j) * cin * cout + co;
                S* dfr = df.data() + (i * d + j) * cin * cout + co;
                for (Index k = 0; k < cin; ++k) {
                  S xv = in ? xr[k] : S(0);
                  S fv = fr[k * cout];
                  dfr[k * cout] += (xv - fv) * gv;
                  if (in) dxr[k] += std::clamp(fv - xv, S(-1), S(1)) * gv;
                }
              }
            }
          }
    t.accum_grad(node.parents[0], std::move(dx));
    t.accum_grad(node.parents[1], std::move(df));
  });
}

// ---------------------------------------------------------------------------
// Linear layer: x [B,in] * w [in,out] + b [out]
// ---------------------------------------------------------------------------

template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
    throw ShapeMismatchError("linear: x " + shape_to_string(xv.shape()) + " w " +
                             shape_to_string(wv.shape()));
  if (b.value().numel() != wv.dim(1)) throw ShapeMismatchError("linear: bias length mismatch");
  const Index B = xv.dim(0), in = wv.dim(0), out = wv.dim(1);
  Tensor<S> y({B, out});
  y.matrix(B, out).noalias() = xv.matrix(B, in) * wv.matrix(in, out);
  for (Index r = 0; r < B; ++r)
    for (Index c = 0; c < out; ++c) y(r, c) += b.value()[c];
  return x.tape->make("linear", std::move(y), {x, w, b}, [](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& x = t.value(node.parents[0]);
    const Tensor<S>& w = t.value(node.parents[1]);
    const Tensor<S>& dy = t.raw_grad(self);
    const Index B = x.dim(0), in = w.dim(0), out = w.dim(1);
    Tensor<S> dx({B, in});
    Tensor<S> dw({in, out});
    Tensor<S> db({out});
    dx.matrix(B, in).noalias() = dy.matrix(B, out) * w.matrix(in, out).transpose();
    dw.matrix(in, out).noalias() = x.matrix(B, in).transpose() * dy.matrix(B, out);
    for (Index r = 0; r < B; ++r)
      for (Index c = 0; c < out; ++c) db[c] += dy(r, c);
    t.accum_grad(node.parents[0], std::move(dx));
    t.accum_grad(node.parents[1], std::move(dw));
    t.accum_grad(node.parents[2], std::move(db));
  });
}

// ---------------------------------------------------------------------------
// Batch normalization over NHWC with per-channel statistics.
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormStats {
  Tensor<S>* running_mean = nullptr;
  Tensor<S>* running_var = nullptr;
  S eps = S(1e-5);
  S momentum = S(0.1);
};

template <class S>
Var<S> batchnorm(Var<S> x, Var<S> gamma, Var<S> beta, BatchNormStats<S> stats, bool train) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4) throw ShapeMismatchError("batchnorm: input must be rank-4 NHWC");
  const Index C = xv.dim(3);
  const Index m = xv.numel() / C;
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw ShapeMismatchError("batchnorm: affine parameter length mismatch");
  if (train && m < 2) throw ShapeMismatchError("batchnorm: train mode needs at least 2 rows");

  auto xm = xv.matrix(m, C);
  FlatArray<S> mean(C), invstd(C);
  if (train) {
    for (Index c = 0; c < C; ++c) {
      S mu = xm.col(c).sum() / S(m);
      S var = (xm.col(c).array() - mu).square().sum() / S(m);
      mean[c] = mu;
      invstd[c] = S(1) / std::sqrt(var + stats.eps);
      (*stats.running_mean)[c] =
          (S(1) - stats.momentum) * (*stats.running_mean)[c] + stats.momentum * mu;
      (*stats.running_var)[c] =
          (S(1) - stats.momentum) * (*stats.running_var)[c] + stats.momentum * var;
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = (*stats.running_mean)[c];
      invstd[c] = S(1) / std::sqrt((*stats.running_var)[c] + stats.eps);
    }
  }

  Tensor<S> y(xv.shape());
  auto ym = y.matrix(m, C);
  for (Index c = 0; c < C; ++c)
    ym.col(c) = ((xm.col(c).array() - mean[c]) * invstd[c] * gamma.value()[c] + beta.value()[c])
                    .matrix();

  return x.tape->make("batchnorm", std::move(y), {x, gamma, beta},
                      [mean, invstd, train, m, C](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& x = t.value(node.parents[0]);
    const Tensor<S>& gamma = t.value(node.parents[1]);
    const Tensor<S>& dy = t.raw_grad(self);
    auto xm = x.matrix(m, C);
    auto dym = dy.matrix(m, C);
    Tensor<S> dx(x.shape());
    Tensor<S> dgamma({C});
    Tensor<S> dbeta({C});
    auto dxm = dx.matrix(m, C);
    for (Index c = 0; c < C; ++c) {
      FlatArray<S> xhat = (xm.col(c).array() - mean[c]) * invstd[c];
      FlatArray<S> dyc = dym.col(c).array();
      dgamma[c] = (dyc * xhat).sum();
      dbeta[c] = dyc.sum();
      if (train) {
        S mean_dy = dbeta[c] / S(m);
        S mean_dy_xhat = dgamma[c] / S(m);
        dxm.col(c) =
            ((dyc - mean_dy - xhat * mean_dy_xhat) * gamma[c] * invstd[c]).matrix();
      } else {
        dxm.col(c) = (dyc * gamma[c] * invstd[c]).matrix();
      }
    }
    t.accum_grad(node.parents[0], std::move(dx));
    t.accum_grad(node.parents[1], std::move(dgamma));
    t.accum_grad(node.parents[2], std::move(dbeta));
  });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <class S>
Var<S> maxpool(Var<S> x, PoolGeom g) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4) throw ShapeMismatchError("maxpool: input must be rank-4 NHWC");
  const Index N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const Index Ho = g.out_extent(H), Wo = g.out_extent(W);
  if (Ho < 1 || Wo < 1) throw ShapeMismatchError("maxpool: empty output extent");
  Tensor<S> y({N, Ho, Wo, C});
  // argmax flat indices; first maximum wins so routing is deterministic
  std::vector<Index> arg(static_cast<size_t>(y.numel()));
  for (Index n = 0; n < N; ++n)
    for (Index u = 0; u < Ho; ++u)
      for (Index v = 0; v < Wo; ++v)
        for (Index c = 0; c < C; ++c) {
          S best = std::numeric_limits<S>::lowest();
          Index best_idx = -1;
          for (Index i = 0; i < g.window; ++i) {
            Index yy = u * g.stride + i - g.pad;
            if (yy < 0 || yy >= H) continue;
            for (Index j = 0; j < g.window; ++j) {
              Index xx = v * g.stride + j - g.pad;
              if (xx < 0 || xx >= W) continue;
              S val = xv(n, yy, xx, c);
              if (val > best) {
                best = val;
                best_idx = ((n * H + yy) * W + xx) * C + c;
              }
            }
          }
          y(n, u, v, c) = best;
          arg[static_cast<size_t>(((n * Ho + u) * Wo + v) * C + c)] = best_idx;
        }
  return x.tape->make("maxpool", std::move(y), {x}, [arg](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& dy = t.raw_grad(self);
    Tensor<S> dx(t.value(node.parents[0]).shape());
    for (Index i = 0; i < dy.numel(); ++i) dx[arg[static_cast<size_t>(i)]] += dy[i];
    t.accum_grad(node.parents[0], std::move(dx));
  });
}

/// Global average pooling: [N,H,W,C] -> [N,C].
template <class S>
Var<S> global_avg_pool(Var<S> x) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 4) throw ShapeMismatchError("global_avg_pool: input must be rank-4 NHWC");
  const Index N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  Tensor<S> y({N, C});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      S acc = 0;
      for (Index yy = 0; yy < H; ++yy)
        for (Index xx = 0; xx < W; ++xx) acc += xv(n, yy, xx, c);
      y(n, c) = acc / S(H * W);
    }
  return x.tape->make("global_avg_pool", std::move(y), {x}, [](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& xv = t.value(node.parents[0]);
    const Tensor<S>& dy = t.raw_grad(self);
    const Index N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    Tensor<S> dx(xv.shape());
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c) {
        S g = dy(n, c) / S(H * W);
        for (Index yy = 0; yy < H; ++yy)
          for (Index xx = 0; xx < W; ++xx) dx(n, yy, xx, c) = g;
      }
    t.accum_grad(node.parents[0], std::move(dx));
  });
}

template <class S>
Var<S> flatten(Var<S> x) {
  const Tensor<S>& xv = x.value();
  return reshape(x, Shape{xv.dim(0), xv.numel() / xv.dim(0)});
}

// ---------------------------------------------------------------------------
// Distillation kernels and the per-tap 1x1 channel alignment.
// ---------------------------------------------------------------------------

/// Gaussian-alike kernel on a convolution preactivation:
/// exp(-preact / (2 sigma^2)). Exponent arguments above 80 abort the step.
template <class S>
Var<S> kernel_h(Var<S> preact, Var<S> sigma, int layer_index = -1) {
  if (sigma.value().numel() != 1) throw ShapeMismatchError("kernel_h: sigma must be scalar");
  S sg = sigma.value().item();
  if (!(sg > S(0))) throw TapeError("kernel_h: sigma must be positive");
  S coef = S(-1) / (S(2) * sg * sg);
  FlatArray<S> arg = preact.value().array() * coef;
  S max_arg = arg.maxCoeff();
  if (max_arg > S(80)) throw KernelOverflowError(layer_index, static_cast<double>(max_arg));
  Tensor<S> out(preact.value().shape(), arg.exp());
  return preact.tape->make("kernel_h", std::move(out), {preact, sigma},
                           [coef, sg](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    const Tensor<S>& out = t.value(self);
    const Tensor<S>& p = t.value(node.parents[0]);
    t.accum_grad(node.parents[0], Tensor<S>(g.shape(), g.array() * out.array() * coef));
    // d/dsigma exp(-p/(2 s^2)) = exp(...) * p / s^3
    S ds = (g.array() * out.array() * p.array()).sum() / (sg * sg * sg);
    t.accum_grad(node.parents[1], Tensor<S>::scalar(ds));
  });
}

/// Laplace kernel on an adder preactivation (which is <= 0 by construction):
/// exp(preact / sigma), bounded in (0, 1].
template <class S>
Var<S> kernel_g(Var<S> preact, Var<S> sigma, int layer_index = -1) {
  if (sigma.value().numel() != 1) throw ShapeMismatchError("kernel_g: sigma must be scalar");
  S sg = sigma.value().item();
  if (!(sg > S(0))) throw TapeError("kernel_g: sigma must be positive");
  if ((preact.value().array() > S(0)).any())
    throw TapeError("kernel_g: positive preactivation violates the adder-output contract (layer " +
                    std::to_string(layer_index) + ")");
  Tensor<S> out(preact.value().shape(), (preact.value().array() / sg).exp());
  return preact.tape->make("kernel_g", std::move(out), {preact, sigma},
                           [sg](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& g = t.raw_grad(self);
    const Tensor<S>& out = t.value(self);
    const Tensor<S>& p = t.value(node.parents[0]);
    t.accum_grad(node.parents[0], Tensor<S>(g.shape(), g.array() * out.array() / sg));
    S ds = -(g.array() * out.array() * p.array()).sum() / (sg * sg);
    t.accum_grad(node.parents[1], Tensor<S>::scalar(ds));
  });
}

/// Per-position channel mixing: out(n,h,w,j) = sum_i in(n,h,w,i) * w(i,j).
/// Plain ordered loops so the result matches a per-pixel matrix-vector oracle
/// bitwise.
template <class S>
Var<S> rho_apply(Var<S> kernel_out, Var<S> weight) {
  const Tensor<S>& kv = kernel_out.value();
  const Tensor<S>& wv = weight.value();
  if (kv.rank() != 4) throw ShapeMismatchError("rho_apply: input must be rank-4 NHWC");
  if (wv.rank() != 2 || wv.dim(0) != wv.dim(1) || wv.dim(0) != kv.dim(3))
    throw ShapeMismatchError("rho_apply: weight must be [c,c] matching input channels");
  const Index P = kv.numel() / kv.dim(3);
  const Index C = kv.dim(3);
  Tensor<S> y(kv.shape());
  const S* kp = kv.data();
  S* yp = y.data();
  for (Index p = 0; p < P; ++p, kp += C, yp += C)
    for (Index j = 0; j < C; ++j) {
      S acc = 0;
      for (Index i = 0; i < C; ++i) acc += kp[i] * wv(i, j);
      yp[j] = acc;
    }
  return kernel_out.tape->make("rho_apply", std::move(y), {kernel_out, weight},
                               [P, C](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    const Tensor<S>& k = t.value(node.parents[0]);
    const Tensor<S>& w = t.value(node.parents[1]);
    const Tensor<S>& dy = t.raw_grad(self);
    Tensor<S> dk(k.shape());
    Tensor<S> dw(w.shape());
    const S* kp = k.data();
    const S* dyp = dy.data();
    S* dkp = dk.data();
    for (Index p = 0; p < P; ++p, kp += C, dyp += C, dkp += C)
      for (Index j = 0; j < C; ++j) {
        S g = dyp[j];
        for (Index i = 0; i < C; ++i) {
          dkp[i] += w(i, j) * g;
          dw(i, j) += kp[i] * g;
        }
      }
    t.accum_grad(node.parents[0], std::move(dk));
    t.accum_grad(node.parents[1], std::move(dw));
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw ShapeMismatchError("softmax_rows: rank-2 input required");
  const Index N = logits.dim(0), K = logits.dim(1);
  Tensor<S> p(logits.shape());
  for (Index n = 0; n < N; ++n) {
    S m = logits(n, 0);
    for (Index k = 1; k < K; ++k) m = std::max(m, logits(n, k));
    S z = 0;
    for (Index k = 0; k < K; ++k) {
      S e = std::exp(logits(n, k) - m);
      p(n, k) = e;
      z += e;
    }
    for (Index k = 0; k < K; ++k) p(n, k) /= z;
  }
  return p;
}

template <class S>
Tensor<S> one_hot(const std::vector<int>& labels, Index classes) {
  Tensor<S> t({static_cast<Index>(labels.size()), classes});
  for (size_t i = 0; i < labels.size(); ++i) {
    int l = labels[i];
    if (l < 0 || l >= classes)
      throw ShapeMismatchError("one_hot: label " + std::to_string(l) + " out of range");
    t(static_cast<Index>(i), l) = S(1);
  }
  return t;
}

/// Mean over the batch of -sum_k target * log softmax(logits), with the log
/// taken through a stable log-sum-exp. Target rows must be probability
/// distributions.
template <class S>
Var<S> soft_cross_entropy(Var<S> logits, const Tensor<S>& target) {
  const Tensor<S>& lv = logits.value();
  if (lv.rank() != 2) throw ShapeMismatchError("soft_cross_entropy: logits must be [N,K]");
  if (!lv.same_shape(target))
    throw ShapeMismatchError("soft_cross_entropy: class-count mismatch, logits " +
                             shape_to_string(lv.shape()) + " target " +
                             shape_to_string(target.shape()));
  const Index N = lv.dim(0), K = lv.dim(1);
  for (Index n = 0; n < N; ++n) {
    S row = 0;
    for (Index k = 0; k < K; ++k) {
      if (target(n, k) < S(0))
        throw TapeError("soft_cross_entropy: negative target probability in row " +
                        std::to_string(n));
      row += target(n, k);
    }
    if (std::abs(static_cast<double>(row) - 1.0) > 1e-5)
      throw TapeError("soft_cross_entropy: target row " + std::to_string(n) +
                      " sums to " + std::to_string(static_cast<double>(row)));
  }
  Tensor<S> p = softmax_rows(lv);
  S loss = 0;
  for (Index n = 0; n < N; ++n) {
    S m = lv(n, 0);
    for (Index k = 1; k < K; ++k) m = std::max(m, lv(n, k));
    S z = 0;
    for (Index k = 0; k < K; ++k) z += std::exp(lv(n, k) - m);
    S lse = m + std::log(z);
    S row = 0;
    for (Index k = 0; k < K; ++k) row += target(n, k) * (lse - lv(n, k));
    loss += row;
  }
  loss /= S(N);
  return logits.tape->make("soft_cross_entropy", Tensor<S>::scalar(loss), {logits},
                           [p = std::move(p), target, N](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    S g = t.raw_grad(self).item() / S(N);
    Tensor<S> dl(p.shape(), (p.array() - target.array()) * g);
    t.accum_grad(node.parents[0], std::move(dl));
  });
}

/// Mean over all elements of (a - b)^2.
template <class S>
Var<S> mse_mean(Var<S> a, Var<S> b) {
  detail::check_same_shape("mse_mean", a.value(), b.value());
  const Index m = a.value().numel();
  S loss = S((a.value().array() - b.value().array()).square().sum() / S(m));
  return a.tape->make("mse_mean", Tensor<S>::scalar(loss), {a, b}, [m](Tape<S>& t, int self) {
    const auto& node = t.node(self);
    S g = t.raw_grad(self).item() * S(2) / S(m);
    FlatArray<S> diff = t.value(node.parents[0]).array() - t.value(node.parents[1]).array();
    t.accum_grad(node.parents[0], Tensor<S>(t.value(node.parents[0]).shape(), diff * g));
    t.accum_grad(node.parents[1], Tensor<S>(t.value(node.parents[1]).shape(), diff * (-g)));
  });
}

}  // namespace pkkd
