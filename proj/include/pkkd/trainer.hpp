#pragma once

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "pkkd/checkpoint.hpp"
#include "pkkd/config.hpp"
#include "pkkd/data.hpp"
#include "pkkd/distill.hpp"
#include "pkkd/metrics.hpp"
#include "pkkd/model.hpp"
#include "pkkd/optimizer.hpp"

namespace pkkd {

template <class S>
double batch_accuracy(const Tensor<S>& logits, const std::vector<int>& labels) {
  const Index N = logits.dim(0), K = logits.dim(1);
  Index hits = 0;
  for (Index n = 0; n < N; ++n) {
    Index best = 0;
    for (Index k = 1; k < K; ++k)
      if (logits(n, k) > logits(n, best)) best = k;
    if (best == labels[static_cast<size_t>(n)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

struct StepMetrics {
  double loss_ce_teacher = 0;
  double loss_mid = 0;
  double loss_blend = 0;
  double loss_total = 0;
  double teacher_acc = 0;
  double student_acc = 0;
};

/// Rebuilds the model pair of a checkpoint (weights only, no optimizer
/// state); enough for eval, feature dumps and diagnostics.
template <class S>
ModelPair<S> pair_from_blobs(const std::vector<NamedBlob>& blobs, const RunConfig& cfg) {
  ModelPair<S> pair = build_pair<S>(cfg.arch_spec, cfg.train.seed, cfg.distill.tap_layers);
  for (auto& p : pair.teacher.params)
    p.value = tensor_from_blob<S>(find_blob(blobs, "teacher/" + p.name));
  for (auto& p : pair.student.params)
    p.value = tensor_from_blob<S>(find_blob(blobs, "student/" + p.name));
  for (auto& h : pair.heads)
    for (Parameter<S>* p : h.all())
      p->value = tensor_from_blob<S>(find_blob(blobs, "distill/" + p->name));
  return pair;
}

/// Joint progressive training: per batch the teacher takes a plain
/// cross-entropy step while the student takes a step on
/// beta * L_mid + L_blend, with the teacher's taps and logits entering the
/// student loss as constants. The teacher backbone update is therefore
/// bit-identical to a standalone CE step on the same batch.
template <class S>
class Trainer {
 public:
  Trainer(RunConfig cfg, Dataset train_data, Dataset test_data)
      : cfg_(std::move(cfg)),
        train_data_(std::move(train_data)),
        test_data_(std::move(test_data)),
        pair_(build_pair<S>(cfg_.arch_spec, cfg_.train.seed, cfg_.distill.tap_layers)),
        opt_teacher_(S(cfg_.train.momentum), S(cfg_.train.weight_decay)),
        opt_student_(S(cfg_.train.momentum), S(cfg_.train.weight_decay)) {
    cfg_.distill.tap_layers = pair_.tap_layers;
    if (train_data_.size() < cfg_.train.batch_size)
      throw DataError("training set smaller than one batch");
  }

  const RunConfig& config() const { return cfg_; }
  ModelPair<S>& pair() { return pair_; }
  std::uint64_t step() const { return step_; }
  const std::vector<MetricsRow>& history() const { return history_; }

  std::uint64_t steps_per_epoch() const {
    return static_cast<std::uint64_t>(train_data_.size() / cfg_.train.batch_size);
  }
  std::uint64_t total_steps() const {
    return steps_per_epoch() * static_cast<std::uint64_t>(cfg_.train.epochs);
  }

  double current_lr() const { return cosine_lr(step_, total_steps(), cfg_.train.base_lr); }

  StepMetrics step_once() {
    std::uint64_t epoch = step_ / steps_per_epoch();
    std::uint64_t pos = step_ % steps_per_epoch();
    std::vector<Index> order = epoch_order(train_data_.size(), cfg_.train.seed, epoch);
    AugmentPolicy policy;
    policy.enabled = cfg_.dataset.augment;
    Batch raw = make_batch(train_data_, order, static_cast<Index>(pos) * cfg_.train.batch_size,
                           cfg_.train.batch_size, policy, cfg_.train.seed, epoch);
    Tensor<S> images = raw.images.template cast<S>();
    S lr = S(current_lr());

    StepMetrics m;
    switch (cfg_.mode) {
      case TrainMode::Pkkd:
        m = pkkd_step(images, raw.labels, lr);
        break;
      case TrainMode::VanillaAnn:
        m = ce_step(pair_.student, opt_student_, images, raw.labels, lr, true);
        break;
      case TrainMode::CnnOnly:
        m = ce_step(pair_.teacher, opt_teacher_, images, raw.labels, lr, false);
        break;
    }
    ++step_;
    accum_add(m);
    return m;
  }

  /// Runs to the configured epoch count, emitting one metrics row per epoch.
  /// progress, when set, gets one line per epoch.
  void run(bool progress = false) {
    while (step_ < total_steps()) {
      step_once();
      if (step_ % steps_per_epoch() == 0) {
        MetricsRow row = finish_epoch();
        if (progress) {
          std::fprintf(stderr, "epoch %3llu  step %6llu  loss %.4f  teacher %.4f  student %.4f\n",
                       static_cast<unsigned long long>(row.epoch),
                       static_cast<unsigned long long>(row.step), row.loss_total,
                       row.teacher_test_acc, row.student_test_acc);
        }
      }
    }
  }

  double evaluate_teacher() { return evaluate(pair_.teacher); }
  double evaluate_student() { return evaluate(pair_.student); }

  double evaluate(Model<S>& model) {
    if (test_data_.size() == 0) return 0;
    return evaluate_on(model, test_data_);
  }

  double evaluate_on(Model<S>& model, const Dataset& data) {
    const Index n = data.size();
    Index hits = 0;
    std::vector<Index> order(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (Index start = 0; start < n; start += 256) {
      Index bs = std::min<Index>(256, n - start);
      Batch b = make_batch(data, order, start, bs, AugmentPolicy{}, 0, 0);
      Tensor<S> images = b.images.template cast<S>();
      Tape<S> tape;
      auto fwd = model.forward(tape, images, false);
      const Tensor<S>& logits = fwd.logits.value();
      for (Index r = 0; r < bs; ++r) {
        Index best = 0;
        for (Index k = 1; k < logits.dim(1); ++k)
          if (logits(r, k) > logits(r, best)) best = k;
        if (best == b.labels[static_cast<size_t>(r)]) ++hits;
      }
    }
    return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  }

  // -- checkpointing --------------------------------------------------------

  std::vector<NamedBlob> to_blobs() const {
    std::vector<NamedBlob> blobs;
    blobs.push_back(blob_from_string("config", run_config_to_json(cfg_)));
    blobs.push_back(blob_from_u64("state.step", step_));
    blobs.push_back(blob_from_u64("state.seed", cfg_.train.seed));
    Tensor<double> accum({7});
    accum[0] = accum_count_;
    accum[1] = accum_.loss_ce_teacher;
    accum[2] = accum_.loss_mid;
    accum[3] = accum_.loss_blend;
    accum[4] = accum_.loss_total;
    accum[5] = accum_.teacher_acc;
    accum[6] = accum_.student_acc;
    blobs.push_back(blob_from_tensor("state.epoch_accum", accum));
    blobs.push_back(blob_from_string("state.metrics", metrics_to_csv(history_)));
    for (const auto& p : pair_.teacher.params)
      blobs.push_back(blob_from_tensor("teacher/" + p.name, p.value));
    for (const auto& p : pair_.student.params)
      blobs.push_back(blob_from_tensor("student/" + p.name, p.value));
    for (auto& h : const_cast<ModelPair<S>&>(pair_).heads)
      for (Parameter<S>* p : h.all())
        blobs.push_back(blob_from_tensor("distill/" + p->name, p->value));
    for (const auto& [name, v] : opt_teacher_.velocities())
      blobs.push_back(blob_from_tensor("opt_teacher/" + name, v));
    for (const auto& [name, v] : opt_student_.velocities())
      blobs.push_back(blob_from_tensor("opt_student/" + name, v));
    return blobs;
  }

  void save(const std::string& path) const { save_checkpoint(path, to_blobs()); }

  static Trainer from_blobs(const std::vector<NamedBlob>& blobs, Dataset train_data,
                            Dataset test_data) {
    RunConfig cfg = parse_run_config(string_from_blob(find_blob(blobs, "config")));
    Trainer t(std::move(cfg), std::move(train_data), std::move(test_data));
    t.step_ = u64_from_blob(find_blob(blobs, "state.step"));
    Tensor<double> accum = tensor_from_blob<double>(find_blob(blobs, "state.epoch_accum"));
    t.accum_count_ = accum[0];
    t.accum_.loss_ce_teacher = accum[1];
    t.accum_.loss_mid = accum[2];
    t.accum_.loss_blend = accum[3];
    t.accum_.loss_total = accum[4];
    t.accum_.teacher_acc = accum[5];
    t.accum_.student_acc = accum[6];
    t.history_ = metrics_from_csv(string_from_blob(find_blob(blobs, "state.metrics")));
    for (auto& p : t.pair_.teacher.params)
      p.value = tensor_from_blob<S>(find_blob(blobs, "teacher/" + p.name));
    for (auto& p : t.pair_.student.params)
      p.value = tensor_from_blob<S>(find_blob(blobs, "student/" + p.name));
    for (auto& h : t.pair_.heads)
      for (Parameter<S>* p : h.all())
        p->value = tensor_from_blob<S>(find_blob(blobs, "distill/" + p->name));
    for (const NamedBlob& b : blobs) {
      if (b.name.rfind("opt_teacher/", 0) == 0)
        t.opt_teacher_.velocities()[b.name.substr(12)] = tensor_from_blob<S>(b);
      else if (b.name.rfind("opt_student/", 0) == 0)
        t.opt_student_.velocities()[b.name.substr(12)] = tensor_from_blob<S>(b);
    }
    return t;
  }

  static Trainer load(const std::string& path, Dataset train_data, Dataset test_data) {
    return from_blobs(load_checkpoint(path), std::move(train_data), std::move(test_data));
  }

 private:
  StepMetrics pkkd_step(const Tensor<S>& images, const std::vector<int>& labels, S lr) {
    const S alpha = S(cfg_.distill.alpha);
    const S beta = S(cfg_.distill.beta);
    const S temperature = S(cfg_.distill.temperature);
    const bool use_mid = beta > S(0) && !pair_.tap_layers.empty();
    std::set<int> tap_set;
    if (use_mid) tap_set.insert(pair_.tap_layers.begin(), pair_.tap_layers.end());

    // Teacher: forward (taps captured), CE, update. Nothing of the student
    // loss touches this tape.
    Tape<S> tape_t;
    auto ft = pair_.teacher.forward(tape_t, images, true, tap_set);
    Var<S> ce_t =
        soft_cross_entropy(ft.logits, one_hot<S>(labels, pair_.plan.spec.class_count));
    GradMap<S> grads_t = tape_t.backward(ce_t);
    apply_grads(pair_.teacher, opt_teacher_, grads_t, lr, false);

    // Student: forward, kernel-aligned taps against detached teacher taps,
    // blended loss against detached teacher logits.
    Tape<S> tape_s;
    auto fs = pair_.student.forward(tape_s, images, true, tap_set);
    Var<S> blend = loss_blend(fs.logits, ft.logits.value(), labels, alpha, temperature);
    StepMetrics m;
    Var<S> total = blend;
    if (use_mid) {
      std::vector<Var<S>> taps_a, taps_c;
      for (int tap : pair_.tap_layers) {
        DistillHead<S>& head = pair_.head_for(tap);
        Var<S> sigma_a = vexp(tape_s.leaf(head.sigma_a_log.value, head.sigma_a_log.name));
        Var<S> rho_a_w = tape_s.leaf(head.rho_a.value, head.rho_a.name);
        taps_a.push_back(rho_apply(kernel_g(fs.taps.at(tap), sigma_a, tap), rho_a_w));
        Var<S> tap_c = tape_s.constant(ft.taps.at(tap).value());
        Var<S> sigma_c = vexp(tape_s.leaf(head.sigma_c_log.value, head.sigma_c_log.name));
        Var<S> rho_c_w = tape_s.leaf(head.rho_c.value, head.rho_c.name);
        taps_c.push_back(rho_apply(kernel_h(tap_c, sigma_c, tap), rho_c_w));
      }
      Var<S> mid = loss_mid(taps_a, taps_c);
      m.loss_mid = static_cast<double>(mid.value().item());
      total = loss_total(mid, blend, beta);
    }
    GradMap<S> grads_s = tape_s.backward(total);
    apply_grads(pair_.student, opt_student_, grads_s, lr, cfg_.train.adaptive_adder_lr);
    for (auto& h : pair_.heads)
      for (Parameter<S>* p : h.all()) {
        auto it = grads_s.find(p->name);
        if (it == grads_s.end()) continue;
        clip_grad_norm(it->second, std::sqrt(double(p->value.numel())));
        opt_student_.apply(*p, it->second, lr);
      }

    m.loss_ce_teacher = static_cast<double>(ce_t.value().item());
    m.loss_blend = static_cast<double>(blend.value().item());
    m.loss_total = static_cast<double>(total.value().item());
    m.teacher_acc = batch_accuracy(ft.logits.value(), labels);
    m.student_acc = batch_accuracy(fs.logits.value(), labels);
    return m;
  }

  StepMetrics ce_step(Model<S>& model, SgdMomentum<S>& opt, const Tensor<S>& images,
                      const std::vector<int>& labels, S lr, bool student_side) {
    Tape<S> tape;
    auto fwd = model.forward(tape, images, true);
    Var<S> ce = soft_cross_entropy(fwd.logits, one_hot<S>(labels, pair_.plan.spec.class_count));
    GradMap<S> grads = tape.backward(ce);
    apply_grads(model, opt, grads, lr, student_side && cfg_.train.adaptive_adder_lr);
    StepMetrics m;
    double acc = batch_accuracy(fwd.logits.value(), labels);
    double loss = static_cast<double>(ce.value().item());
    m.loss_total = loss;
    if (student_side) {
      m.loss_blend = loss;
      m.student_acc = acc;
      m.loss_ce_teacher = std::nan("");
      m.teacher_acc = std::nan("");
    } else {
      m.loss_ce_teacher = loss;
      m.teacher_acc = acc;
      m.loss_blend = std::nan("");
      m.student_acc = std::nan("");
    }
    m.loss_mid = std::nan("");
    return m;
  }

  void apply_grads(Model<S>& model, SgdMomentum<S>& opt, GradMap<S>& grads, S lr,
                   bool adaptive) {
    for (auto& p : model.params) {
      if (!p.learnable) continue;
      auto it = grads.find(p.name);
      if (it == grads.end()) continue;
      if (adaptive && p.adder_filter) adaptive_adder_scale(it->second);
      opt.apply(p, it->second, lr);
    }
  }

  void accum_add(const StepMetrics& m) {
    accum_count_ += 1;
    auto acc = [](double& slot, double v) { slot += std::isnan(v) ? 0.0 : v; };
    acc(accum_.loss_ce_teacher, m.loss_ce_teacher);
    acc(accum_.loss_mid, m.loss_mid);
    acc(accum_.loss_blend, m.loss_blend);
    acc(accum_.loss_total, m.loss_total);
    acc(accum_.teacher_acc, m.teacher_acc);
    acc(accum_.student_acc, m.student_acc);
  }

  MetricsRow finish_epoch() {
    MetricsRow row;
    row.epoch = step_ / steps_per_epoch();
    row.step = step_;
    row.lr = cosine_lr(step_, total_steps(), cfg_.train.base_lr);
    double n = accum_count_ > 0 ? accum_count_ : 1;
    row.loss_ce_teacher = accum_.loss_ce_teacher / n;
    row.loss_mid = accum_.loss_mid / n;
    row.loss_blend = accum_.loss_blend / n;
    row.loss_total = accum_.loss_total / n;
    row.teacher_train_acc = accum_.teacher_acc / n;
    row.student_train_acc = accum_.student_acc / n;
    bool teacher_active = cfg_.mode != TrainMode::VanillaAnn;
    bool student_active = cfg_.mode != TrainMode::CnnOnly;
    row.teacher_test_acc = teacher_active ? evaluate_teacher() : std::nan("");
    row.student_test_acc = student_active ? evaluate_student() : std::nan("");
    if (!teacher_active) {
      row.loss_ce_teacher = std::nan("");
      row.teacher_train_acc = std::nan("");
    }
    if (!student_active) {
      row.loss_blend = std::nan("");
      row.student_train_acc = std::nan("");
    }
    if (cfg_.mode != TrainMode::Pkkd) row.loss_mid = std::nan("");
    accum_ = StepMetrics{};
    accum_count_ = 0;
    history_.push_back(row);
    return row;
  }

  RunConfig cfg_;
  Dataset train_data_;
  Dataset test_data_;
  ModelPair<S> pair_;
  SgdMomentum<S> opt_teacher_;
  SgdMomentum<S> opt_student_;
  std::uint64_t step_ = 0;
  StepMetrics accum_;
  double accum_count_ = 0;
  std::vector<MetricsRow> history_;
};

}  // namespace pkkd
