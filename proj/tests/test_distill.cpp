#include <doctest.h>

#include <cmath>

#include "pkkd/distill.hpp"
#include "pkkd/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace pkkd;

TEST_CASE("kernel_h: scalar values, overflow guard, monotonicity") {
  Tape<double> t;
  Var<double> sigma = t.leaf(Tensor<double>::scalar(1.0));
  Var<double> zero = t.leaf(Tensor<double>({1, 1, 1, 1}, {0.0}));
  CHECK(kernel_h(zero, sigma).value().item() == 1.0);

  Var<double> two = t.leaf(Tensor<double>({1, 1, 1, 1}, {2.0}));
  CHECK(kernel_h(two, sigma).value().item() == doctest::Approx(0.367879).epsilon(1e-6));
  Var<double> neg = t.leaf(Tensor<double>({1, 1, 1, 1}, {-2.0}));
  CHECK(kernel_h(neg, sigma).value().item() == doctest::Approx(2.718282).epsilon(1e-6));

  // exponent argument above 80 aborts and names the tap layer
  Var<double> big = t.leaf(Tensor<double>({1, 1, 1, 1}, {-170.0}));
  CHECK_THROWS_WITH_AS(kernel_h(big, sigma, 3), doctest::Contains("tap layer 3"),
                       KernelOverflowError);

  // strictly decreasing in the preactivation for fixed sigma
  SplitMix64 rng(2);
  double prev = 1e300;
  for (double p = -3.0; p <= 3.0; p += 0.25) {
    Var<double> pv = t.leaf(Tensor<double>({1, 1, 1, 1}, {p}));
    double v = kernel_h(pv, sigma).value().item();
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("kernel_g: scalar values, bounds, contract, monotonicity") {
  Tape<double> t;
  Var<double> s1 = t.leaf(Tensor<double>::scalar(1.0));
  Var<double> s2 = t.leaf(Tensor<double>::scalar(2.0));
  Var<double> zero = t.leaf(Tensor<double>({1, 1, 1, 1}, {0.0}));
  CHECK(kernel_g(zero, s1).value().item() == 1.0);
  Var<double> neg2 = t.leaf(Tensor<double>({1, 1, 1, 1}, {-2.0}));
  CHECK(kernel_g(neg2, s1).value().item() == doctest::Approx(0.135335).epsilon(1e-6));
  CHECK(kernel_g(neg2, s2).value().item() == doctest::Approx(0.367879).epsilon(1e-6));

  Var<double> pos = t.leaf(Tensor<double>({1, 1, 1, 1}, {0.5}));
  CHECK_THROWS_AS(kernel_g(pos, s1), TapeError);

  // output in (0, 1] for all valid preactivations; monotone in the preact
  SplitMix64 rng(8);
  Tensor<double> p1 = oracle::random_tensor<double>({1, 3, 3, 2}, rng, -6.0, 0.0);
  Tensor<double> p2 = p1;
  for (Index i = 0; i < p2.numel(); ++i) p2[i] += rng.uniform(0.0, -p2[i]);  // p1 <= p2 <= 0
  Tensor<double> g1 = kernel_g(t.leaf(p1), s1).value();
  Tensor<double> g2 = kernel_g(t.leaf(p2), s1).value();
  for (Index i = 0; i < g1.numel(); ++i) {
    CHECK(g1[i] > 0.0);
    CHECK(g1[i] <= 1.0);
    CHECK(g1[i] <= g2[i]);
  }
}

TEST_CASE("rho_apply: identity, zeros, per-pixel oracle") {
  SplitMix64 rng(11);
  Tensor<double> in = oracle::random_tensor<double>({2, 3, 3, 4}, rng);
  Tape<double> t;
  Tensor<double> eye({4, 4});
  for (Index i = 0; i < 4; ++i) eye(i, i) = 1.0;
  Tensor<double> out = rho_apply(t.leaf(in), t.leaf(eye)).value();
  for (Index i = 0; i < in.numel(); ++i) CHECK(out[i] == in[i]);

  Tensor<double> zeros = rho_apply(t.leaf(in), t.leaf(Tensor<double>({4, 4}))).value();
  CHECK(zeros.array().abs().maxCoeff() == 0.0);

  Tensor<double> w = oracle::random_tensor<double>({4, 4}, rng);
  Tensor<double> mine = rho_apply(t.leaf(in), t.leaf(w)).value();
  Tensor<double> ref = oracle::rho(in, w);
  for (Index i = 0; i < mine.numel(); ++i) CHECK(mine[i] == ref[i]);

  CHECK_THROWS_AS(rho_apply(t.leaf(in), t.leaf(Tensor<double>({3, 3}))), ShapeMismatchError);
}

TEST_CASE("loss_mid: zero, hand value, decomposition, permutation symmetry") {
  Tape<double> t;
  SplitMix64 rng(13);
  Tensor<double> a = oracle::random_tensor<double>({2, 2}, rng);
  Var<double> av = t.leaf(a);
  CHECK(loss_mid<double>({av}, {av}).value().item() == 0.0);

  Var<double> za = t.leaf(Tensor<double>({1, 2}, {0.0, 0.0}));
  Var<double> zc = t.leaf(Tensor<double>({1, 2}, {1.0, 3.0}));
  CHECK(loss_mid<double>({za}, {zc}).value().item() == 5.0);

  // M = 2 equals the sum of independently computed mse terms exactly
  Tensor<double> b = oracle::random_tensor<double>({2, 2}, rng);
  Tensor<double> c = oracle::random_tensor<double>({2, 2}, rng);
  Tensor<double> d = oracle::random_tensor<double>({2, 2}, rng);
  Var<double> bv = t.leaf(b), cv = t.leaf(c), dv = t.leaf(d);
  double m1 = mse_mean(av, cv).value().item();
  double m2 = mse_mean(bv, dv).value().item();
  double both = loss_mid<double>({av, bv}, {cv, dv}).value().item();
  CHECK((both == m1 + m2 || both == m2 + m1));

  // permutation symmetry is exact
  double swapped = loss_mid<double>({bv, av}, {dv, cv}).value().item();
  CHECK(both == swapped);

  // three taps, all orders agree bitwise
  Tensor<double> e = oracle::random_tensor<double>({3, 3}, rng);
  Tensor<double> f = oracle::random_tensor<double>({3, 3}, rng);
  Var<double> ev = t.leaf(e), fv = t.leaf(f);
  double base = loss_mid<double>({av, bv, ev}, {cv, dv, fv}).value().item();
  CHECK(loss_mid<double>({ev, av, bv}, {fv, cv, dv}).value().item() == base);
  CHECK(loss_mid<double>({bv, ev, av}, {dv, fv, cv}).value().item() == base);

  CHECK_THROWS_AS(loss_mid<double>({av, bv}, {cv}), ShapeMismatchError);
}

TEST_CASE("loss_blend: alpha 0 reduction, shared logits, uniform double ln10") {
  Tape<double> t;
  SplitMix64 rng(19);
  Tensor<double> logits = oracle::random_tensor<double>({4, 10}, rng, -2.0, 2.0);
  std::vector<int> labels = {1, 4, 0, 9};

  Var<double> sv = t.leaf(logits);
  double plain = soft_cross_entropy(sv, one_hot<double>(labels, 10)).value().item();
  double blend0 =
      loss_blend(t.leaf(logits), logits, labels, 0.0, 1.0).value().item();
  CHECK(blend0 == plain);

  // student == teacher, alpha = 1, T = 1: CE(gt) + entropy of shared softmax
  double blend1 = loss_blend(t.leaf(logits), logits, labels, 1.0, 1.0).value().item();
  Tensor<double> p = softmax_rows(logits);
  double entropy = 0;
  for (Index n = 0; n < 4; ++n)
    for (Index k = 0; k < 10; ++k) entropy -= p(n, k) * std::log(p(n, k));
  entropy /= 4.0;
  CHECK(blend1 == doctest::Approx(plain + entropy).epsilon(1e-9));

  // uniform student logits: both terms are ln 10
  Tensor<double> uniform = Tensor<double>::zeros({4, 10});
  double u = loss_blend(t.leaf(uniform), logits, labels, 1.0, 1.0).value().item();
  CHECK(u == doctest::Approx(2.0 * std::log(10.0)).epsilon(1e-9));

  // class-count mismatch
  CHECK_THROWS_AS(loss_blend(t.leaf(uniform), oracle::random_tensor<double>({4, 7}, rng),
                             labels, 1.0, 1.0),
                  ShapeMismatchError);
}

TEST_CASE("loss_total: reductions, arithmetic, gradient linearity") {
  Tape<double> t;
  Var<double> mid = t.leaf(Tensor<double>::scalar(5.0));
  Var<double> blend = t.leaf(Tensor<double>::scalar(2.0));
  CHECK(loss_total(mid, blend, 0.0).value().item() == 2.0);
  CHECK(loss_total(mid, blend, 10.0).value().item() == 52.0);

  // d(loss_total)/dp == beta * (grad via mid) + (grad via blend)
  SplitMix64 rng(23);
  Tensor<double> param = oracle::random_tensor<double>({2, 3}, rng);
  Tensor<double> target1 = oracle::random_tensor<double>({2, 3}, rng);
  Tensor<double> target2 = oracle::random_tensor<double>({2, 3}, rng);
  const double beta = 3.0;

  auto run = [&](bool with_mid, bool with_blend, double scale_mid) {
    Tape<double> tape;
    Var<double> p = tape.leaf(param, "p");
    Var<double> m = mse_mean(p, tape.constant(target1));
    Var<double> b = mse_mean(mul(p, p), tape.constant(target2));
    Var<double> loss = with_mid && with_blend ? loss_total(m, b, scale_mid)
                       : with_mid            ? m
                                             : b;
    return tape.backward(loss).at("p");
  };
  Tensor<double> g_total = run(true, true, beta);
  Tensor<double> g_mid = run(true, false, 0);
  Tensor<double> g_blend = run(false, true, 0);
  for (Index i = 0; i < param.numel(); ++i)
    CHECK(g_total[i] == doctest::Approx(beta * g_mid[i] + g_blend[i]).epsilon(1e-12));
}

TEST_CASE("sigma gradients match finite differences (64-bit, 1e-4 relative)") {
  SplitMix64 rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> preact_c = oracle::random_tensor<double>({1, 2, 2, 3}, rng, -2.0, 2.0);
    Tensor<double> preact_a = oracle::random_tensor<double>({1, 2, 2, 3}, rng, -4.0, 0.0);
    Tensor<double> target = oracle::random_tensor<double>({1, 2, 2, 3}, rng, 0.0, 1.0);
    Tensor<double> w = oracle::random_tensor<double>({3, 3}, rng);

    auto build_h = [&](Tape<double>& t, const std::vector<Var<double>>& in) {
      Var<double> sigma = in[0];
      return mse_mean(rho_apply(kernel_h(t.constant(preact_c), sigma), t.constant(w)),
                      t.constant(target));
    };
    CHECK(gradcheck::max_violation(build_h, {Tensor<double>::scalar(1.1)}, 1e-6, 1e-4, 1e-10) <=
          0.0);

    auto build_g = [&](Tape<double>& t, const std::vector<Var<double>>& in) {
      Var<double> sigma = in[0];
      return mse_mean(rho_apply(kernel_g(t.constant(preact_a), sigma), t.constant(w)),
                      t.constant(target));
    };
    CHECK(gradcheck::max_violation(build_g, {Tensor<double>::scalar(0.9)}, 1e-6, 1e-4, 1e-10) <=
          0.0);
  }
}

TEST_CASE("rho and kernel gradients match finite differences") {
  SplitMix64 rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> in = oracle::random_tensor<double>({2, 2, 2, 3}, rng);
    Tensor<double> w = oracle::random_tensor<double>({3, 3}, rng);
    auto build = [](Tape<double>& t, const std::vector<Var<double>>& inp) {
      Var<double> y = rho_apply(inp[0], inp[1]);
      return mean(mul(y, y));
    };
    CHECK(gradcheck::passes(build, {in, w}));

    Tensor<double> pre = oracle::random_tensor<double>({1, 2, 2, 2}, rng, -3.0, 3.0);
    auto build_h = [](Tape<double>& t, const std::vector<Var<double>>& inp) {
      return mean(kernel_h(inp[0], inp[1]));
    };
    CHECK(gradcheck::passes(build_h, {pre, Tensor<double>::scalar(1.2)}, 1e-6, 1e-5, 1e-8));
  }
}

TEST_CASE("gradient flow isolation: teacher-side taps are constants") {
  SplitMix64 rng(41);
  Tensor<double> tap_a = oracle::random_tensor<double>({1, 2, 2, 2}, rng, -3.0, 0.0);
  Tensor<double> tap_c = oracle::random_tensor<double>({1, 2, 2, 2}, rng, -1.0, 1.0);
  Tensor<double> w = oracle::random_tensor<double>({2, 2}, rng);

  Tape<double> t;
  Var<double> student_tap = t.leaf(tap_a, "student_tap");
  Var<double> teacher_tap = t.constant(tap_c);  // detached
  Var<double> sa = t.leaf(Tensor<double>::scalar(1.0), "sigma_a");
  Var<double> sc = t.leaf(Tensor<double>::scalar(1.0), "sigma_c");
  Var<double> wa = t.leaf(w, "rho_a");
  Var<double> wc = t.leaf(w, "rho_c");
  Var<double> ya = rho_apply(kernel_g(student_tap, sa), wa);
  Var<double> yc = rho_apply(kernel_h(teacher_tap, sc), wc);
  GradMap<double> grads = t.backward(loss_mid<double>({ya}, {yc}));

  // the student side and both alignment heads receive gradients...
  CHECK(grads.at("student_tap").array().abs().maxCoeff() > 0.0);
  CHECK(grads.at("sigma_c").array().abs().maxCoeff() > 0.0);
  CHECK(grads.at("rho_c").array().abs().maxCoeff() > 0.0);
  // ...and the teacher tap is not even a gradient target
  CHECK(grads.count("teacher_tap") == 0);
}
