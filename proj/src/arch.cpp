#include "pkkd/arch.hpp"

#include <algorithm>

namespace pkkd {

std::string ActShape::str() const {
  if (flat) return "[" + std::to_string(units) + "]";
  return "[" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) + "]";
}

namespace {

std::string item_name(size_t idx, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "l%02zu.%s", idx, kind);
  return buf;
}

[[noreturn]] void fail(const ArchSpec& spec, size_t layer, const std::string& what) {
  throw ArchError("arch '" + spec.name + "' layer " + std::to_string(layer) + ": " + what);
}

}  // namespace

ModelPlan build_plan(const ArchSpec& spec) {
  if (spec.input_shape[0] < 1 || spec.input_shape[1] < 1 || spec.input_shape[2] < 1)
    throw ArchError("arch '" + spec.name + "': invalid input shape");
  if (spec.class_count < 2) throw ArchError("arch '" + spec.name + "': class_count must be >= 2");

  ModelPlan plan;
  plan.spec = spec;
  ActShape cur{false, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
  std::vector<ActShape> residual_stack;
  Index prev_weighted_units = 0;

  auto push = [&](PlanItem item, ActShape out) {
    item.in_shape = cur;
    item.out_shape = out;
    plan.items.push_back(std::move(item));
    cur = out;
  };

  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerDesc& d = spec.layers[li];
    size_t pi = plan.items.size();
    switch (d.kind) {
      case LayerKind::Conv: {
        if (cur.flat) fail(spec, li, "conv applied to flattened activation");
        if (d.kernel < 1 || d.channels < 1 || d.stride < 1 || d.pad < 0)
          fail(spec, li, "invalid conv geometry");
        ConvGeom g{d.kernel, d.stride, d.pad};
        Index ho = g.out_extent(cur.h), wo = g.out_extent(cur.w);
        if (ho < 1 || wo < 1) fail(spec, li, "empty conv output extent");
        PlanItem item;
        item.op = PlanOp::Conv;
        item.name = item_name(pi, "conv");
        item.geom = g;
        item.c_in = cur.c;
        item.c_out = d.channels;
        item.weighted_index = plan.weighted_count++;
        prev_weighted_units = d.channels;
        push(std::move(item), ActShape{false, ho, wo, d.channels, 0});
        PlanItem bn;
        bn.op = PlanOp::BatchNorm;
        bn.name = item_name(plan.items.size(), "bn");
        bn.c_out = d.channels;
        push(std::move(bn), cur);
        break;
      }
      case LayerKind::ReLU: {
        PlanItem item;
        item.op = PlanOp::ReLU;
        item.name = item_name(pi, "relu");
        push(std::move(item), cur);
        break;
      }
      case LayerKind::MaxPool: {
        if (cur.flat) fail(spec, li, "maxpool applied to flattened activation");
        PoolGeom g{d.window, d.stride, d.pad};
        Index ho = g.out_extent(cur.h), wo = g.out_extent(cur.w);
        if (ho < 1 || wo < 1) fail(spec, li, "empty pool output extent");
        PlanItem item;
        item.op = PlanOp::MaxPool;
        item.name = item_name(pi, "maxpool");
        item.pool = g;
        push(std::move(item), ActShape{false, ho, wo, cur.c, 0});
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (cur.flat) fail(spec, li, "global pool applied to flattened activation");
        PlanItem item;
        item.op = PlanOp::GlobalAvgPool;
        item.name = item_name(pi, "gap");
        push(std::move(item), ActShape{true, 0, 0, 0, cur.c});
        break;
      }
      case LayerKind::Flatten: {
        if (cur.flat) fail(spec, li, "flatten applied twice");
        PlanItem item;
        item.op = PlanOp::Flatten;
        item.name = item_name(pi, "flatten");
        push(std::move(item), ActShape{true, 0, 0, 0, cur.h * cur.w * cur.c});
        break;
      }
      case LayerKind::Linear: {
        if (!cur.flat) fail(spec, li, "linear requires a flattened activation (add flatten/gap)");
        if (d.units < 1) fail(spec, li, "invalid linear width");
        PlanItem item;
        item.op = PlanOp::Linear;
        item.name = item_name(pi, "linear");
        item.in_units = cur.units;
        item.out_units = d.units;
        item.weighted_index = plan.weighted_count++;
        plan.penultimate_units = prev_weighted_units;
        prev_weighted_units = d.units;
        push(std::move(item), ActShape{true, 0, 0, 0, d.units});
        break;
      }
      case LayerKind::ResidualBegin: {
        plan.has_residual = true;
        residual_stack.push_back(cur);
        PlanItem item;
        item.op = PlanOp::ResidualSave;
        item.name = item_name(pi, "res_save");
        push(std::move(item), cur);
        break;
      }
      case LayerKind::ResidualEnd: {
        if (residual_stack.empty()) fail(spec, li, "residual end without begin");
        ActShape saved = residual_stack.back();
        residual_stack.pop_back();
        if (cur.flat || saved.flat) fail(spec, li, "residual join on flattened activation");
        PlanItem item;
        item.op = PlanOp::ResidualAdd;
        item.name = item_name(pi, "res_add");
        if (!(saved == cur)) {
          if (saved.h % cur.h != 0 || saved.w % cur.w != 0 || saved.h / cur.h != saved.w / cur.w)
            fail(spec, li, "residual shapes " + saved.str() + " vs " + cur.str() +
                               " admit no 1x1 projection");
          item.has_projection = true;
          item.proj_geom = ConvGeom{1, saved.h / cur.h, 0};
          item.proj_c_in = saved.c;
          item.proj_c_out = cur.c;
        }
        push(std::move(item), cur);
        break;
      }
    }
  }
  if (!residual_stack.empty())
    throw ArchError("arch '" + spec.name + "': unterminated residual block");
  if (plan.items.empty() || plan.items.back().op != PlanOp::Linear)
    throw ArchError("arch '" + spec.name + "': last layer must be the linear classifier head");
  if (plan.items.back().out_units != spec.class_count)
    throw ArchError("arch '" + spec.name + "': classifier width " +
                    std::to_string(plan.items.back().out_units) + " != class_count " +
                    std::to_string(spec.class_count));
  int heads = 0;
  for (const PlanItem& it : plan.items)
    if (it.op == PlanOp::Linear && it.out_units == spec.class_count &&
        &it == &plan.items.back())
      ++heads;
  if (heads != 1) throw ArchError("arch '" + spec.name + "': exactly one classifier head required");

  // Adder eligibility: interior main-path convs. The stem (ordinal 0), the
  // classifier, shortcut projections and all linear layers stay unchanged in
  // the student.
  for (PlanItem& it : plan.items) {
    if (it.op != PlanOp::Conv) continue;
    it.role = it.weighted_index == 0 ? ConvRole::Stem : ConvRole::Interior;
    it.adder_in_student = it.role == ConvRole::Interior &&
                          it.weighted_index != plan.weighted_count - 1;
  }
  return plan;
}

std::vector<int> tap_points(const ModelPlan& plan) {
  std::vector<int> taps;
  if (plan.has_residual) {
    // last conv inside each residual block
    int last_conv_ordinal = -1;
    for (const PlanItem& it : plan.items) {
      if (it.op == PlanOp::Conv) last_conv_ordinal = it.weighted_index;
      if (it.op == PlanOp::ResidualAdd && last_conv_ordinal > 0 &&
          last_conv_ordinal < plan.weighted_count - 1)
        taps.push_back(last_conv_ordinal);
    }
  } else {
    for (const PlanItem& it : plan.items)
      if (it.op == PlanOp::Conv && it.adder_in_student) taps.push_back(it.weighted_index);
  }
  return taps;
}

std::vector<int> tap_points(const ArchSpec& spec) { return tap_points(build_plan(spec)); }

Index tap_channels(const ModelPlan& plan, int weighted_index) {
  for (const PlanItem& it : plan.items)
    if (it.op == PlanOp::Conv && it.weighted_index == weighted_index) return it.c_out;
  throw ArchError("tap layer " + std::to_string(weighted_index) + " is not a conv layer");
}

// ---------------------------------------------------------------------------
// Built-in architectures
// ---------------------------------------------------------------------------

namespace {

void add_basic_stage(std::vector<LayerDesc>& L, Index channels, int blocks, Index first_stride) {
  for (int b = 0; b < blocks; ++b) {
    Index s = b == 0 ? first_stride : 1;
    L.push_back(LayerDesc::residual_begin());
    L.push_back(LayerDesc::conv(3, channels, s, 1));
    L.push_back(LayerDesc::relu());
    L.push_back(LayerDesc::conv(3, channels, 1, 1));
    L.push_back(LayerDesc::residual_end());
    L.push_back(LayerDesc::relu());
  }
}

void add_bottleneck_stage(std::vector<LayerDesc>& L, Index channels, int blocks,
                          Index first_stride) {
  for (int b = 0; b < blocks; ++b) {
    Index s = b == 0 ? first_stride : 1;
    L.push_back(LayerDesc::residual_begin());
    L.push_back(LayerDesc::conv(1, channels, s, 0));
    L.push_back(LayerDesc::relu());
    L.push_back(LayerDesc::conv(3, channels, 1, 1));
    L.push_back(LayerDesc::relu());
    L.push_back(LayerDesc::conv(1, channels * 4, 1, 0));
    L.push_back(LayerDesc::residual_end());
    L.push_back(LayerDesc::relu());
  }
}

ArchSpec cifar_resnet(const std::string& name, int blocks_per_stage) {
  ArchSpec a;
  a.name = name;
  a.input_shape = {32, 32, 3};
  a.class_count = 10;
  a.layers.push_back(LayerDesc::conv(3, 16, 1, 1));
  a.layers.push_back(LayerDesc::relu());
  add_basic_stage(a.layers, 16, blocks_per_stage, 1);
  add_basic_stage(a.layers, 32, blocks_per_stage, 2);
  add_basic_stage(a.layers, 64, blocks_per_stage, 2);
  a.layers.push_back(LayerDesc::gap());
  a.layers.push_back(LayerDesc::linear(10));
  return a;
}

ArchSpec make_vgg_small() {
  ArchSpec a;
  a.name = "vgg-small";
  a.input_shape = {32, 32, 3};
  a.class_count = 10;
  auto& L = a.layers;
  for (Index c : {128, 128}) {
    L.push_back(LayerDesc::conv(3, c, 1, 1));
    L.push_back(LayerDesc::relu());
  }
  L.push_back(LayerDesc::maxpool(2, 2));
  for (Index c : {256, 256}) {
    L.push_back(LayerDesc::conv(3, c, 1, 1));
    L.push_back(LayerDesc::relu());
  }
  L.push_back(LayerDesc::maxpool(2, 2));
  for (Index c : {512, 512}) {
    L.push_back(LayerDesc::conv(3, c, 1, 1));
    L.push_back(LayerDesc::relu());
  }
  L.push_back(LayerDesc::maxpool(2, 2));
  L.push_back(LayerDesc::flatten());
  L.push_back(LayerDesc::linear(4096));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::linear(3072));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::linear(10));
  return a;
}

ArchSpec make_lenet_2d() {
  ArchSpec a;
  a.name = "lenet-2d";
  a.input_shape = {28, 28, 1};
  a.class_count = 10;
  auto& L = a.layers;
  L.push_back(LayerDesc::conv(3, 8, 1, 1));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::maxpool(2, 2));
  L.push_back(LayerDesc::conv(3, 16, 1, 1));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::maxpool(2, 2));
  L.push_back(LayerDesc::conv(3, 32, 1, 1));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::maxpool(2, 2));
  L.push_back(LayerDesc::flatten());
  L.push_back(LayerDesc::linear(2));  // 2-d feature layer for visualization dumps
  L.push_back(LayerDesc::linear(10));
  return a;
}

ArchSpec imagenet_resnet18() {
  ArchSpec a;
  a.name = "resnet18";
  a.input_shape = {224, 224, 3};
  a.class_count = 1000;
  auto& L = a.layers;
  L.push_back(LayerDesc::conv(7, 64, 2, 3));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::maxpool(3, 2, 1));
  add_basic_stage(L, 64, 2, 1);
  add_basic_stage(L, 128, 2, 2);
  add_basic_stage(L, 256, 2, 2);
  add_basic_stage(L, 512, 2, 2);
  L.push_back(LayerDesc::gap());
  L.push_back(LayerDesc::linear(1000));
  return a;
}

ArchSpec imagenet_resnet50() {
  ArchSpec a;
  a.name = "resnet50";
  a.input_shape = {224, 224, 3};
  a.class_count = 1000;
  auto& L = a.layers;
  L.push_back(LayerDesc::conv(7, 64, 2, 3));
  L.push_back(LayerDesc::relu());
  L.push_back(LayerDesc::maxpool(3, 2, 1));
  add_bottleneck_stage(L, 64, 3, 1);
  add_bottleneck_stage(L, 128, 4, 2);
  add_bottleneck_stage(L, 256, 6, 2);
  add_bottleneck_stage(L, 512, 3, 2);
  L.push_back(LayerDesc::gap());
  L.push_back(LayerDesc::linear(1000));
  return a;
}

}  // namespace

const std::vector<std::string>& builtin_arch_names() {
  static const std::vector<std::string> names = {"lenet-2d", "vgg-small", "resnet20",
                                                 "resnet32", "resnet18", "resnet50"};
  return names;
}

ArchSpec builtin_arch(const std::string& name) {
  if (name == "lenet-2d") return make_lenet_2d();
  if (name == "vgg-small") return make_vgg_small();
  if (name == "resnet20") return cifar_resnet("resnet20", 3);
  if (name == "resnet32") return cifar_resnet("resnet32", 5);
  if (name == "resnet18") return imagenet_resnet18();
  if (name == "resnet50") return imagenet_resnet50();
  throw ArchError("unknown architecture '" + name + "'");
}

}  // namespace pkkd
