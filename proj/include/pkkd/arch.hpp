#pragma once

#include <array>
#include <string>
#include <vector>

#include "pkkd/ops.hpp"
#include "pkkd/tensor.hpp"

namespace pkkd {

class ArchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerKind {
  Conv,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  Flatten,
  Linear,
  ResidualBegin,
  ResidualEnd,
};

/// One entry of the declarative layer sequence. Batchnorm is not listed: the
/// builder inserts it after every conv/adder layer.
struct LayerDesc {
  LayerKind kind = LayerKind::Conv;
  Index kernel = 0;       // conv
  Index channels = 0;     // conv output channels
  Index stride = 1;       // conv / maxpool
  Index pad = 0;          // conv / maxpool
  Index units = 0;        // linear
  Index window = 0;       // maxpool

  static LayerDesc conv(Index kernel, Index channels, Index stride = 1, Index pad = 0) {
    LayerDesc d;
    d.kind = LayerKind::Conv;
    d.kernel = kernel;
    d.channels = channels;
    d.stride = stride;
    d.pad = pad;
    return d;
  }
  static LayerDesc relu() { return LayerDesc{LayerKind::ReLU}; }
  static LayerDesc maxpool(Index window, Index stride, Index pad = 0) {
    LayerDesc d;
    d.kind = LayerKind::MaxPool;
    d.window = window;
    d.stride = stride;
    d.pad = pad;
    return d;
  }
  static LayerDesc gap() { return LayerDesc{LayerKind::GlobalAvgPool}; }
  static LayerDesc flatten() { return LayerDesc{LayerKind::Flatten}; }
  static LayerDesc linear(Index units) {
    LayerDesc d;
    d.kind = LayerKind::Linear;
    d.units = units;
    return d;
  }
  static LayerDesc residual_begin() { return LayerDesc{LayerKind::ResidualBegin}; }
  static LayerDesc residual_end() { return LayerDesc{LayerKind::ResidualEnd}; }
};

struct ArchSpec {
  std::string name;
  std::array<Index, 3> input_shape{0, 0, 0};  // H, W, C
  Index class_count = 0;
  std::vector<LayerDesc> layers;
};

// ---------------------------------------------------------------------------
// Resolved execution plan. Shared by the model builder, the forward pass and
// the operation counter, so the shapes all three assume are one and the same.
// ---------------------------------------------------------------------------

enum class PlanOp {
  Conv,
  BatchNorm,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  Flatten,
  Linear,
  ResidualSave,
  ResidualAdd,
};

enum class ConvRole { Stem, Interior, Shortcut };

/// Per-sample activation shape: spatial [H,W,C] or flat [units].
struct ActShape {
  bool flat = false;
  Index h = 0, w = 0, c = 0;
  Index units = 0;

  Index numel() const { return flat ? units : h * w * c; }
  bool operator==(const ActShape&) const = default;
  std::string str() const;
};

struct PlanItem {
  PlanOp op;
  std::string name;  // stable parameter prefix, e.g. "l03.conv"

  ConvGeom geom;               // conv
  Index c_in = 0, c_out = 0;   // conv
  ConvRole role = ConvRole::Interior;
  int weighted_index = -1;     // ordinal among main-path conv+linear layers
  bool adder_in_student = false;

  Index in_units = 0, out_units = 0;  // linear

  PoolGeom pool;  // maxpool

  // ResidualAdd: optional 1x1 projection of the saved activation.
  bool has_projection = false;
  ConvGeom proj_geom;
  Index proj_c_in = 0, proj_c_out = 0;

  ActShape in_shape, out_shape;
};

struct ModelPlan {
  ArchSpec spec;
  std::vector<PlanItem> items;
  int weighted_count = 0;       // main-path conv + linear layers
  bool has_residual = false;
  Index penultimate_units = 0;  // output width of the next-to-last weighted layer
};

ModelPlan build_plan(const ArchSpec& spec);

/// Default distillation tap layers as main-path weighted-layer ordinals:
/// residual architectures tap the last conv of every residual block, plain
/// stacks tap every interior conv; ordinal 0 and the final layer are never
/// tapped.
std::vector<int> tap_points(const ArchSpec& spec);
std::vector<int> tap_points(const ModelPlan& plan);

/// Output channel count of the conv at a given main-path ordinal.
Index tap_channels(const ModelPlan& plan, int weighted_index);

const std::vector<std::string>& builtin_arch_names();
ArchSpec builtin_arch(const std::string& name);

}  // namespace pkkd
