#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pkkd/arch.hpp"
#include "pkkd/ops.hpp"
#include "pkkd/tape.hpp"

namespace pkkd {

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  bool learnable = true;
  bool decay_exempt = false;  // batchnorm affine terms and log-sigma parameters
  bool adder_filter = false;  // adaptive gradient rescaling applies
};

/// A CNN teacher or ANN student instantiated from a plan. Parameters are held
/// in registration order; batchnorm running statistics are non-learnable
/// parameters so checkpoints capture them.
template <class S>
class Model {
 public:
  ModelPlan plan;
  bool adder = false;  // student instantiation
  std::vector<Parameter<S>> params;

  struct ForwardResult {
    Var<S> logits;
    Var<S> penultimate;                // input to the classifier layer
    std::map<int, Var<S>> taps;        // weighted ordinal -> raw pre-batchnorm output
  };

  Parameter<S>& param(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw ArchError("unknown parameter '" + name + "'");
  }
  const Parameter<S>& param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
  }
  bool has_param(const std::string& name) const {
    for (auto& p : params)
      if (p.name == name) return true;
    return false;
  }

  Index learnable_count() const {
    Index n = 0;
    for (const auto& p : params)
      if (p.learnable) n += p.value.numel();
    return n;
  }

  /// Forward over the plan. Raw conv outputs at the requested weighted
  /// ordinals are captured before their batchnorm. Batchnorm running stats
  /// are updated when train is set.
  ForwardResult forward(Tape<S>& tape, const Tensor<S>& images, bool train,
                        const std::set<int>& tap_layers = {}) {
    if (images.rank() != 4)
      throw ShapeMismatchError("model forward: images must be [N,H,W,C]");
    const auto& in = plan.spec.input_shape;
    if (images.dim(1) != in[0] || images.dim(2) != in[1] || images.dim(3) != in[2])
      throw ShapeMismatchError("model forward: image shape " + shape_to_string(images.shape()) +
                               " does not match arch input " + std::to_string(in[0]) + "x" +
                               std::to_string(in[1]) + "x" + std::to_string(in[2]));
    ForwardResult out;
    Var<S> x = tape.constant(images);
    std::vector<Var<S>> residual_stack;
    for (const PlanItem& it : plan.items) {
      switch (it.op) {
        case PlanOp::Conv: {
          Var<S> f = leaf(tape, it.name + ".filter");
          bool as_adder = adder && it.adder_in_student;
          x = as_adder ? adder2d(x, f, it.geom) : conv2d(x, f, it.geom);
          if (tap_layers.count(it.weighted_index)) out.taps.emplace(it.weighted_index, x);
          break;
        }
        case PlanOp::BatchNorm:
          x = apply_bn(tape, it.name, x, train);
          break;
        case PlanOp::ReLU:
          x = relu(x);
          break;
        case PlanOp::MaxPool:
          x = maxpool(x, it.pool);
          break;
        case PlanOp::GlobalAvgPool:
          x = global_avg_pool(x);
          break;
        case PlanOp::Flatten:
          x = flatten(x);
          break;
        case PlanOp::Linear: {
          Var<S> w = leaf(tape, it.name + ".weight");
          Var<S> b = leaf(tape, it.name + ".bias");
          if (it.weighted_index == plan.weighted_count - 1) out.penultimate = x;
          x = linear(x, w, b);
          break;
        }
        case PlanOp::ResidualSave:
          residual_stack.push_back(x);
          break;
        case PlanOp::ResidualAdd: {
          Var<S> shortcut = residual_stack.back();
          residual_stack.pop_back();
          if (it.has_projection) {
            Var<S> pf = leaf(tape, it.name + ".shortcut.filter");
            shortcut = adder ? adder2d(shortcut, pf, it.proj_geom)
                             : conv2d(shortcut, pf, it.proj_geom);
            shortcut = apply_bn(tape, it.name + ".shortcut_bn", shortcut, train);
          }
          x = add(x, shortcut);
          break;
        }
      }
    }
    out.logits = x;
    return out;
  }

 private:
  Var<S> leaf(Tape<S>& tape, const std::string& name) {
    Parameter<S>& p = param(name);
    return tape.leaf(p.value, p.name, p.learnable);
  }

  Var<S> apply_bn(Tape<S>& tape, const std::string& prefix, Var<S> x, bool train) {
    Var<S> gamma = leaf(tape, prefix + ".gamma");
    Var<S> beta = leaf(tape, prefix + ".beta");
    BatchNormStats<S> stats;
    stats.running_mean = &param(prefix + ".running_mean").value;
    stats.running_var = &param(prefix + ".running_var").value;
    return batchnorm(x, gamma, beta, stats, train);
  }
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void add_bn_params(Model<S>& m, const std::string& prefix, Index c) {
  m.params.push_back({prefix + ".gamma", Tensor<S>::full({c}, S(1)), true, true, false});
  m.params.push_back({prefix + ".beta", Tensor<S>::zeros({c}), true, true, false});
  m.params.push_back({prefix + ".running_mean", Tensor<S>::zeros({c}), false, false, false});
  m.params.push_back({prefix + ".running_var", Tensor<S>::full({c}, S(1)), false, false, false});
}

}  // namespace detail

/// Instantiate a model from a plan. Conv and linear weights use Kaiming
/// uniform init; adder filters use a normal init at the same fan-in scale.
/// Every parameter draws from its own derived stream, so init is independent
/// of registration order.
template <class S>
Model<S> build_model(const ModelPlan& plan, bool adder, std::uint64_t seed) {
  Model<S> m;
  m.plan = plan;
  m.adder = adder;
  for (const PlanItem& it : plan.items) {
    switch (it.op) {
      case PlanOp::Conv: {
        Shape fs{it.geom.kernel, it.geom.kernel, it.c_in, it.c_out};
        Index fan_in = it.geom.kernel * it.geom.kernel * it.c_in;
        bool as_adder = adder && it.adder_in_student;
        InitScheme scheme = as_adder
                                ? InitScheme::normal(0.0, std::sqrt(2.0 / double(fan_in)))
                                : InitScheme::kaiming_uniform(fan_in);
        std::string name = it.name + ".filter";
        m.params.push_back({name, seeded_init<S>(fs, scheme, derive_seed(seed, name)), true,
                            false, as_adder});
        break;
      }
      case PlanOp::BatchNorm:
        detail::add_bn_params(m, it.name, it.c_out);
        break;
      case PlanOp::Linear: {
        std::string wname = it.name + ".weight";
        m.params.push_back({wname,
                            seeded_init<S>({it.in_units, it.out_units},
                                           InitScheme::kaiming_uniform(it.in_units),
                                           derive_seed(seed, wname)),
                            true, false, false});
        m.params.push_back({it.name + ".bias", Tensor<S>::zeros({it.out_units}), true, false,
                            false});
        break;
      }
      case PlanOp::ResidualAdd:
        if (it.has_projection) {
          std::string pname = it.name + ".shortcut.filter";
          InitScheme scheme = adder
                                  ? InitScheme::normal(0.0, std::sqrt(2.0 / double(it.proj_c_in)))
                                  : InitScheme::kaiming_uniform(it.proj_c_in);
          m.params.push_back({pname,
                              seeded_init<S>({1, 1, it.proj_c_in, it.proj_c_out}, scheme,
                                             derive_seed(seed, pname)),
                              true, false, adder});
          detail::add_bn_params(m, it.name + ".shortcut_bn", it.proj_c_out);
        }
        break;
      default:
        break;
    }
  }
  return m;
}

/// Per-tap alignment head: learnable log-sigmas (positivity by construction)
/// and the 1x1 channel-mixing weights for both sides.
template <class S>
struct DistillHead {
  int tap_layer = -1;
  Index channels = 0;
  Parameter<S> sigma_a_log;
  Parameter<S> sigma_c_log;
  Parameter<S> rho_a;
  Parameter<S> rho_c;

  std::vector<Parameter<S>*> all() {
    return {&sigma_a_log, &sigma_c_log, &rho_a, &rho_c};
  }
};

template <class S>
struct ModelPair {
  ModelPlan plan;
  Model<S> teacher;
  Model<S> student;
  std::vector<int> tap_layers;
  std::vector<DistillHead<S>> heads;

  DistillHead<S>& head_for(int tap_layer) {
    for (auto& h : heads)
      if (h.tap_layer == tap_layer) return h;
    throw ArchError("no distillation head for tap layer " + std::to_string(tap_layer));
  }
};

/// Homogeneous teacher CNN / student ANN pair with matched tap points.
/// Teacher and student are initialized from independent derived seeds; two
/// calls with the same seed produce bitwise-identical pairs.
template <class S>
ModelPair<S> build_pair(const ArchSpec& spec, std::uint64_t seed,
                        std::vector<int> tap_layers = {}) {
  ModelPair<S> pair;
  pair.plan = build_plan(spec);
  pair.teacher = build_model<S>(pair.plan, false, derive_seed(seed, "teacher"));
  pair.student = build_model<S>(pair.plan, true, derive_seed(seed, "student"));
  pair.tap_layers = tap_layers.empty() ? tap_points(pair.plan) : std::move(tap_layers);
  for (int tap : pair.tap_layers) {
    if (tap <= 0 || tap >= pair.plan.weighted_count - 1)
      throw ArchError("tap layer " + std::to_string(tap) +
                      " must exclude the first and last layer");
    DistillHead<S> h;
    h.tap_layer = tap;
    h.channels = tap_channels(pair.plan, tap);
    std::string prefix = "tap" + std::to_string(tap);
    std::uint64_t hs = derive_seed(seed, "heads");
    h.sigma_a_log = {prefix + ".sigma_a_log", Tensor<S>::zeros({1}), true, true, false};
    h.sigma_c_log = {prefix + ".sigma_c_log", Tensor<S>::zeros({1}), true, true, false};
    h.rho_a = {prefix + ".rho_a",
               seeded_init<S>({h.channels, h.channels}, InitScheme::kaiming_uniform(h.channels),
                              derive_seed(hs, prefix + ".rho_a")),
               true, false, false};
    h.rho_c = {prefix + ".rho_c",
               seeded_init<S>({h.channels, h.channels}, InitScheme::kaiming_uniform(h.channels),
                              derive_seed(hs, prefix + ".rho_c")),
               true, false, false};
    pair.heads.push_back(std::move(h));
  }
  return pair;
}

}  // namespace pkkd
