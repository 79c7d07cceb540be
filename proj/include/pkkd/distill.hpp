#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "pkkd/model.hpp"
#include "pkkd/ops.hpp"

namespace pkkd {

struct DistillConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double temperature = 1.0;
  std::vector<int> tap_layers;  // empty: derive from the architecture
};

/// Sum of per-tap mse_mean terms. The teacher-side taps must already be
/// detached (constants on the student tape); nothing here reaches the teacher
/// backbone. Terms are accumulated in value order so the sum is invariant
/// under permutations of the tap list.
template <class S>
Var<S> loss_mid(const std::vector<Var<S>>& taps_a, const std::vector<Var<S>>& taps_c) {
  if (taps_a.size() != taps_c.size())
    throw ShapeMismatchError("loss_mid: tap list length mismatch (" +
                             std::to_string(taps_a.size()) + " vs " +
                             std::to_string(taps_c.size()) + ")");
  if (taps_a.empty()) throw ShapeMismatchError("loss_mid: empty tap lists");
  std::vector<Var<S>> terms;
  terms.reserve(taps_a.size());
  for (size_t m = 0; m < taps_a.size(); ++m) terms.push_back(mse_mean(taps_a[m], taps_c[m]));
  std::vector<size_t> order(terms.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return terms[a].value().item() < terms[b].value().item();
  });
  Var<S> total = terms[order[0]];
  for (size_t i = 1; i < order.size(); ++i) total = add(total, terms[order[i]]);
  return total;
}

/// alpha * soft CE against the teacher's tempered softmax plus soft CE
/// against the ground truth. teacher_logits enter as constants.
template <class S>
Var<S> loss_blend(Var<S> student_logits, const Tensor<S>& teacher_logits,
                  const std::vector<int>& labels, S alpha, S temperature) {
  const Tensor<S>& sl = student_logits.value();
  if (sl.rank() != 2 || !sl.same_shape(teacher_logits))
    throw ShapeMismatchError("loss_blend: class-count mismatch between student and teacher");
  Var<S> hard = soft_cross_entropy(student_logits, one_hot<S>(labels, sl.dim(1)));
  if (alpha == S(0)) return hard;
  Tensor<S> tempered(teacher_logits.shape(), teacher_logits.array() / temperature);
  Tensor<S> soft_target = softmax_rows(tempered);
  Var<S> soft = soft_cross_entropy(scale(student_logits, S(1) / temperature), soft_target);
  return add(scale(soft, alpha), hard);
}

/// beta * mid + blend.
template <class S>
Var<S> loss_total(Var<S> mid, Var<S> blend, S beta) {
  return add(scale(mid, beta), blend);
}

}  // namespace pkkd
