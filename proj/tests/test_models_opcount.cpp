#include <doctest.h>

#include "pkkd/model.hpp"
#include "pkkd/opcount.hpp"
#include "support/oracles.hpp"
#include "support/testdata.hpp"

using namespace pkkd;

TEST_CASE("plan walk closes shapes and validates") {
  ModelPlan lenet = build_plan(builtin_arch("lenet-2d"));
  CHECK(lenet.weighted_count == 5);
  CHECK(lenet.penultimate_units == 2);
  CHECK(lenet.items.back().op == PlanOp::Linear);
  CHECK(lenet.items.back().out_shape.units == 10);

  ModelPlan r20 = build_plan(builtin_arch("resnet20"));
  CHECK(r20.weighted_count == 20);  // 1 stem + 18 block convs + 1 classifier
  CHECK(r20.has_residual);
  int projections = 0;
  for (const auto& it : r20.items)
    if (it.op == PlanOp::ResidualAdd && it.has_projection) ++projections;
  CHECK(projections == 2);

  // shape arithmetic failure names the offending layer
  ArchSpec bad = testdata::tiny_arch();
  bad.layers.insert(bad.layers.begin() + 1, LayerDesc::maxpool(50, 1));
  CHECK_THROWS_WITH_AS(build_plan(bad), doctest::Contains("layer 1"), ArchError);

  ArchSpec no_head = testdata::tiny_arch();
  no_head.layers.pop_back();
  no_head.layers.pop_back();
  CHECK_THROWS_AS(build_plan(no_head), ArchError);
}

TEST_CASE("tap_points: residual block taps and plain-stack taps") {
  // resnet20: one tap per residual block = 9
  std::vector<int> taps = tap_points(builtin_arch("resnet20"));
  CHECK(taps.size() == 9);
  for (int tp : taps) {
    CHECK(tp > 0);
    CHECK(tp < 19);
  }
  CHECK(taps == std::vector<int>{2, 4, 6, 8, 10, 12, 14, 16, 18});

  // a two-layer network (conv, linear) has nothing strictly interior
  ArchSpec two;
  two.name = "two";
  two.input_shape = {8, 8, 1};
  two.class_count = 10;
  two.layers = {LayerDesc::conv(3, 4, 1, 1), LayerDesc::relu(), LayerDesc::gap(),
                LayerDesc::linear(10)};
  CHECK(tap_points(two).empty());

  // lenet-style 2-conv stack: the second conv is interior (linear head is last)
  ArchSpec lenet2 = testdata::tiny_arch();
  CHECK(tap_points(lenet2) == std::vector<int>{1});

  // built-in lenet-2d taps its two interior convs
  CHECK(tap_points(builtin_arch("lenet-2d")) == std::vector<int>{1, 2});
}

TEST_CASE("build_pair: determinism, homogeneity, adder layout") {
  ArchSpec arch = builtin_arch("lenet-2d");
  ModelPair<float> a = build_pair<float>(arch, 7);
  ModelPair<float> b = build_pair<float>(arch, 7);
  REQUIRE(a.teacher.params.size() == b.teacher.params.size());
  for (size_t i = 0; i < a.teacher.params.size(); ++i) {
    const auto& pa = a.teacher.params[i].value;
    const auto& pb = b.teacher.params[i].value;
    for (Index e = 0; e < pa.numel(); ++e) CHECK(pa[e] == pb[e]);
  }
  for (size_t i = 0; i < a.student.params.size(); ++i) {
    const auto& pa = a.student.params[i].value;
    const auto& pb = b.student.params[i].value;
    for (Index e = 0; e < pa.numel(); ++e) CHECK(pa[e] == pb[e]);
  }

  // teacher and student differ (independent derived seeds) but match in shape
  bool any_diff = false;
  REQUIRE(a.teacher.params.size() == a.student.params.size());
  for (size_t i = 0; i < a.teacher.params.size(); ++i) {
    CHECK(a.teacher.params[i].name == a.student.params[i].name);
    CHECK(a.teacher.params[i].value.shape() == a.student.params[i].value.shape());
    const auto& pt = a.teacher.params[i].value;
    const auto& ps = a.student.params[i].value;
    for (Index e = 0; e < pt.numel(); ++e)
      if (pt[e] != ps[e]) any_diff = true;
  }
  CHECK(any_diff);
  CHECK(a.teacher.learnable_count() == a.student.learnable_count());

  // student: first conv and classifier unchanged, interior convs adder
  int adder_filters = 0;
  for (const auto& p : a.student.params)
    if (p.adder_filter) ++adder_filters;
  CHECK(adder_filters == 2);  // conv ordinals 1 and 2
  CHECK_FALSE(a.student.param("l00.conv.filter").adder_filter);

  // heads: one per tap, sigma log-parameterized at 0 (= sigma 1)
  REQUIRE(a.heads.size() == 2);
  CHECK(a.heads[0].sigma_a_log.value.item() == 0.0f);
  CHECK(a.heads[0].rho_a.value.dim(0) == 16);
  CHECK(a.heads[1].rho_a.value.dim(0) == 32);
}

TEST_CASE("resnet20 pair: parameter homogeneity and adder count") {
  ModelPair<float> pair = build_pair<float>(builtin_arch("resnet20"), 3);
  CHECK(pair.teacher.learnable_count() == pair.student.learnable_count());
  int adder_filters = 0;
  for (const auto& p : pair.student.params)
    if (p.adder_filter) ++adder_filters;
  // 18 interior block convs + 2 downsampling projections
  CHECK(adder_filters == 20);
  CHECK(pair.heads.size() == 9);
}

TEST_CASE("count_ops: frozen totals under the documented convention") {
  CountOptions table2;  // defaults: shortcuts excluded, classifier included
  OpCountReport r20c = count_ops(builtin_arch("resnet20"), CountMode::Cnn, table2);
  CHECK(r20c.mul == 40551040ULL);
  CHECK(r20c.add == 40551040ULL);
  OpCountReport r20a = count_ops(builtin_arch("resnet20"), CountMode::Ann, table2);
  CHECK(r20a.mul == 443008ULL);
  CHECK(r20a.add == 80659072ULL);

  OpCountReport r32c = count_ops(builtin_arch("resnet32"), CountMode::Cnn, table2);
  CHECK(r32c.mul == 68862592ULL);
  OpCountReport r32a = count_ops(builtin_arch("resnet32"), CountMode::Ann, table2);
  CHECK(r32a.mul == 443008ULL);
  CHECK(r32a.add == 137282176ULL);

  OpCountReport vgc = count_ops(builtin_arch("vgg-small"), CountMode::Cnn, table2);
  CHECK(vgc.mul == 653686784ULL);
  OpCountReport vga = count_ops(builtin_arch("vgg-small"), CountMode::Ann, table2);
  CHECK(vga.mul == 49707008ULL);
  CHECK(vga.add == 1257666560ULL);

  CountOptions table4;
  table4.include_shortcuts = true;
  OpCountReport r18c = count_ops(builtin_arch("resnet18"), CountMode::Cnn, table4);
  CHECK(r18c.mul == 1814073344ULL);
  OpCountReport r18a = count_ops(builtin_arch("resnet18"), CountMode::Ann, table4);
  CHECK(r18a.mul == 118525952ULL);
  CHECK(r18a.add == 3509620736ULL);
  OpCountReport r50c = count_ops(builtin_arch("resnet50"), CountMode::Cnn, table4);
  CHECK(r50c.mul == 3857973248ULL);
  OpCountReport r50a = count_ops(builtin_arch("resnet50"), CountMode::Ann, table4);
  CHECK(r50a.mul == 120061952ULL);
  CHECK(r50a.add == 7595884544ULL);
}

TEST_CASE("count_ops invariants: identity, symmetry, breakdown totals") {
  for (const std::string& name : builtin_arch_names()) {
    ArchSpec spec = builtin_arch(name);
    for (bool shortcuts : {false, true})
      for (bool classifier : {false, true}) {
        CountOptions opts{shortcuts, classifier};
        OpCountReport cnn = count_ops(spec, CountMode::Cnn, opts);
        OpCountReport ann = count_ops(spec, CountMode::Ann, opts);
        CHECK(cnn.mul == cnn.add);
        // add_ann == 2 (add_cnn - mul_ann) + mul_ann, exactly
        CHECK(ann.add == 2 * (cnn.add - ann.mul) + ann.mul);
        std::uint64_t mul_sum = 0, add_sum = 0;
        for (const auto& l : ann.per_layer) {
          mul_sum += l.mul;
          add_sum += l.add;
        }
        CHECK(mul_sum == ann.mul);
        CHECK(add_sum == ann.add);
      }
  }
}

TEST_CASE("forward shapes agree with the counter's plan") {
  // lenet-2d on a real batch
  ModelPair<float> lenet = build_pair<float>(builtin_arch("lenet-2d"), 5);
  SplitMix64 rng(5);
  Tensor<float> imgs = oracle::random_tensor<float>({2, 28, 28, 1}, rng);
  Tape<float> tape;
  auto fwd = lenet.student.forward(tape, imgs, true, {1, 2});
  CHECK(fwd.logits.value().shape() == Shape{2, 10});
  CHECK(fwd.penultimate.value().shape() == Shape{2, 2});
  CHECK(fwd.taps.at(1).value().shape() == Shape{2, 14, 14, 16});
  CHECK(fwd.taps.at(2).value().shape() == Shape{2, 7, 7, 32});
  // adder taps are non-positive by construction
  CHECK(fwd.taps.at(1).value().array().maxCoeff() <= 0.0f);

  // resnet20 on a CIFAR-shaped batch: every plan shape is exercised in-bounds
  ModelPair<float> r20 = build_pair<float>(builtin_arch("resnet20"), 5);
  Tensor<float> cifar = oracle::random_tensor<float>({1, 32, 32, 3}, rng);
  Tape<float> tape2;
  auto fwd_t = r20.teacher.forward(tape2, cifar, true);
  CHECK(fwd_t.logits.value().shape() == Shape{1, 10});
  Tape<float> tape3;
  auto fwd_s = r20.student.forward(tape3, cifar, true, {2});
  CHECK(fwd_s.logits.value().shape() == Shape{1, 10});
  CHECK(fwd_s.taps.at(2).value().shape() == Shape{1, 32, 32, 16});

  // plan shapes for the ImageNet variants stay internally consistent
  for (const char* name : {"resnet18", "resnet50"}) {
    ModelPlan plan = build_plan(builtin_arch(name));
    for (size_t i = 1; i < plan.items.size(); ++i)
      CHECK(plan.items[i].in_shape == plan.items[i - 1].out_shape);
  }
}

TEST_CASE("model forward rejects mismatched input shapes") {
  ModelPair<float> lenet = build_pair<float>(builtin_arch("lenet-2d"), 1);
  Tape<float> tape;
  Tensor<float> wrong({2, 32, 32, 1});
  CHECK_THROWS_AS(lenet.teacher.forward(tape, wrong, true), ShapeMismatchError);
}

TEST_CASE("tap layers must exclude first and last weighted layers") {
  ArchSpec arch = builtin_arch("lenet-2d");
  CHECK_THROWS_AS(build_pair<float>(arch, 1, {0}), ArchError);
  CHECK_THROWS_AS(build_pair<float>(arch, 1, {4}), ArchError);
  ModelPair<float> ok = build_pair<float>(arch, 1, {2});
  CHECK(ok.heads.size() == 1);
}
