#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pkkd/checkpoint.hpp"
#include "pkkd/config.hpp"
#include "pkkd/diagnostics.hpp"
#include "pkkd/digits.hpp"
#include "pkkd/features.hpp"
#include "pkkd/kernel_theory.hpp"
#include "pkkd/opcount.hpp"
#include "pkkd/trainer.hpp"

namespace {

using namespace pkkd;

Dataset load_split(const RunConfig& cfg, const std::string& data_dir, Split split) {
  DatasetSource src;
  src.kind = cfg.dataset.kind;
  src.root = data_dir;
  src.split = split;
  src.mean = cfg.dataset.mean;
  src.std = cfg.dataset.std;
  return load_dataset(src);
}

template <class S>
int run_train(RunConfig cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume) {
  Dataset train_data = load_split(cfg, data_dir, Split::Train);
  Dataset test_data = load_split(cfg, data_dir, Split::Test);
  std::filesystem::create_directories(out_dir);

  Trainer<S> trainer = resume.empty()
                           ? Trainer<S>(cfg, std::move(train_data), std::move(test_data))
                           : Trainer<S>::load(resume, std::move(train_data), std::move(test_data));
  trainer.run(true);

  std::string metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
  std::ofstream mf(metrics_path, std::ios::trunc);
  mf << metrics_to_csv(trainer.history());
  mf.close();

  std::string ckpt_path = (std::filesystem::path(out_dir) / "final.pkkd").string();
  trainer.save(ckpt_path);

  const MetricsRow& last = trainer.history().back();
  std::printf("mode=%s epochs=%llu steps=%llu\n", to_string(trainer.config().mode).c_str(),
              static_cast<unsigned long long>(last.epoch),
              static_cast<unsigned long long>(last.step));
  if (trainer.config().mode != TrainMode::VanillaAnn)
    std::printf("teacher_test_acc=%.4f\n", last.teacher_test_acc);
  if (trainer.config().mode != TrainMode::CnnOnly)
    std::printf("student_test_acc=%.4f\n", last.student_test_acc);
  std::printf("metrics=%s\ncheckpoint=%s\n", metrics_path.c_str(), ckpt_path.c_str());
  return 0;
}

template <class S>
int run_eval(const std::vector<NamedBlob>& blobs, const RunConfig& cfg,
             const std::string& data_dir) {
  Dataset test_data = load_split(cfg, data_dir, Split::Test);
  ModelPair<S> pair = pair_from_blobs<S>(blobs, cfg);
  // reuse the trainer's batched eval path without constructing a trainer
  std::vector<Index> order(static_cast<size_t>(test_data.size()));
  for (Index i = 0; i < test_data.size(); ++i) order[static_cast<size_t>(i)] = i;
  auto eval_model = [&](Model<S>& m) {
    Index hits = 0;
    for (Index start = 0; start < test_data.size(); start += 256) {
      Index bs = std::min<Index>(256, test_data.size() - start);
      Batch b = make_batch(test_data, order, start, bs, AugmentPolicy{}, 0, 0);
      Tensor<S> images = b.images.template cast<S>();
      Tape<S> tape;
      auto fwd = m.forward(tape, images, false);
      const Tensor<S>& logits = fwd.logits.value();
      for (Index r = 0; r < bs; ++r) {
        Index best = 0;
        for (Index k = 1; k < logits.dim(1); ++k)
          if (logits(r, k) > logits(r, best)) best = k;
        if (best == b.labels[static_cast<size_t>(r)]) ++hits;
      }
    }
    return double(hits) / double(test_data.size());
  };
  if (cfg.mode != TrainMode::VanillaAnn)
    std::printf("teacher_test_acc=%.4f\n", eval_model(pair.teacher));
  if (cfg.mode != TrainMode::CnnOnly)
    std::printf("student_test_acc=%.4f\n", eval_model(pair.student));
  return 0;
}

template <class S>
int run_features(const std::vector<NamedBlob>& blobs, const RunConfig& cfg,
                 const std::string& data_dir, const std::string& out,
                 const std::string& which_model, Index limit) {
  Dataset test_data = load_split(cfg, data_dir, Split::Test);
  ModelPair<S> pair = pair_from_blobs<S>(blobs, cfg);
  std::string which = which_model;
  if (which.empty()) which = cfg.mode == TrainMode::CnnOnly ? "teacher" : "student";
  Model<S>& model = which == "teacher" ? pair.teacher : pair.student;
  std::string csv = dump_features(model, test_data, limit);
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw DataError("cannot open '" + out + "' for writing");
  f << csv;
  std::fprintf(stderr, "wrote %s features for %s\n", which.c_str(), out.c_str());
  return 0;
}

int run_count(const std::string& arch, const std::string& mode, bool include_shortcuts,
              bool include_classifier) {
  ArchSpec spec = builtin_arch(arch);
  CountMode m = mode == "cnn" ? CountMode::Cnn : CountMode::Ann;
  if (mode != "cnn" && mode != "ann") throw ConfigError("mode must be cnn or ann");
  CountOptions opts;
  opts.include_shortcuts = include_shortcuts;
  opts.include_classifier = include_classifier;
  OpCountReport r = count_ops(spec, m, opts);
  std::printf("# arch=%s mode=%s include_shortcuts=%d include_classifier=%d\n", arch.c_str(),
              mode.c_str(), include_shortcuts ? 1 : 0, include_classifier ? 1 : 0);
  std::printf("layer,mul,add\n");
  for (const LayerCount& l : r.per_layer)
    std::printf("%s,%llu,%llu\n", l.name.c_str(), static_cast<unsigned long long>(l.mul),
                static_cast<unsigned long long>(l.add));
  std::printf("total,%llu,%llu\n", static_cast<unsigned long long>(r.mul),
              static_cast<unsigned long long>(r.add));
  std::printf("# mul=%s add=%s\n", format_count(r.mul).c_str(), format_count(r.add).c_str());
  return 0;
}

int run_verify_theorem(int max_order) {
  // fixed probe vectors spanning the convergence region |x.f|/(2 sigma^2) <= 2
  struct Probe {
    std::vector<double> x, f;
    double sigma;
  };
  std::vector<Probe> probes = {
      {{1.0}, {1.0}, 0.7071067811865476},           // x.f = 1, 2s^2 = 1
      {{0.5, -0.3}, {0.8, 0.4}, 0.5},               // mixed signs
      {{0.6, 0.2, -0.4}, {0.5, -0.7, 0.3}, 0.6},    // k = 3
      {{0.9, 0.9}, {0.9, 0.9}, 0.75},               // near the |a| = 2 boundary
      {{0.0, 1.0}, {1.0, 0.0}, 1.0},                // orthogonal: residual 0 at N=0
  };
  bool all_ok = true;
  for (size_t pi = 0; pi < probes.size(); ++pi) {
    const Probe& p = probes[pi];
    double a = 0;
    for (size_t i = 0; i < p.x.size(); ++i) a += p.x[i] * p.f[i];
    a /= 2.0 * p.sigma * p.sigma;
    std::printf("# probe %zu: k=%zu sigma=%g xf/(2s^2)=%g\n", pi, p.x.size(), p.sigma, a);
    std::printf("order,term,partial_sum,residual\n");
    auto rows = expansion_table(p.x, p.f, p.sigma, max_order);
    for (const auto& r : rows)
      std::printf("%d,%.17g,%.17g,%.3e\n", r.order, r.term, r.partial_sum, r.residual);
    double final_residual = rows.back().residual;
    bool ok = final_residual <= 1e-9;
    if (std::abs(a) <= 2.0 && max_order >= 15 && !ok) all_ok = false;
    std::printf("# final_residual=%.3e %s\n", final_residual, ok ? "(<= 1e-9)" : "(> 1e-9)");
  }
  if (!all_ok) {
    std::fprintf(stderr, "verify-theorem: residual above 1e-9 inside the bounded region\n");
    return 1;
  }
  return 0;
}

int run_weight_hist(const std::string& ckpt, const std::string& layer) {
  std::vector<NamedBlob> blobs = load_checkpoint(ckpt);
  std::vector<std::string> candidates = {layer, "student/" + layer + ".filter",
                                         "teacher/" + layer + ".filter",
                                         "student/" + layer, "teacher/" + layer};
  const NamedBlob* found = nullptr;
  for (const std::string& c : candidates)
    if (has_blob(blobs, c)) {
      found = &find_blob(blobs, c);
      break;
    }
  if (!found) {
    std::fprintf(stderr, "no weight tensor matches '%s'; available filter tensors:\n",
                 layer.c_str());
    for (const NamedBlob& b : blobs)
      if (b.name.find(".filter") != std::string::npos ||
          b.name.find(".weight") != std::string::npos)
        std::fprintf(stderr, "  %s\n", b.name.c_str());
    return 1;
  }
  if (found->dtype != DType::F32 && found->dtype != DType::F64)
    throw CheckpointError("tensor '" + found->name + "' has no weights");
  std::vector<double> values;
  if (found->dtype == DType::F32) {
    Tensor<float> t = tensor_from_blob<float>(*found);
    for (Index i = 0; i < t.numel(); ++i) values.push_back(static_cast<double>(t[i]));
  } else {
    Tensor<double> t = tensor_from_blob<double>(*found);
    for (Index i = 0; i < t.numel(); ++i) values.push_back(t[i]);
  }
  WeightHistogram h = weight_histogram(values);
  std::fputs(format_weight_histogram(h, found->name).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adder-network training engine with progressive kernel-based distillation"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model pair from a JSON config");
  std::string config_path, data_dir = ".", out_dir = "out", resume, mode_override;
  std::uint64_t seed_override = 0;
  train->add_option("--config", config_path, "JSON config path")->required();
  train->add_option("--data-dir", data_dir, "dataset root directory");
  train->add_option("--out-dir", out_dir, "output directory");
  auto* seed_opt = train->add_option("--seed", seed_override, "override train.seed");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--mode", mode_override, "pkkd | vanilla-ann | cnn-only");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval->add_option("--data-dir", data_dir, "dataset root directory");

  // count
  auto* count = app.add_subcommand("count", "static multiplication/addition counts");
  std::string arch = "resnet20", count_mode = "cnn";
  bool include_shortcuts = false, include_classifier = true;
  count->add_option("--arch", arch, "architecture name");
  count->add_option("--mode", count_mode, "cnn | ann");
  count->add_option("--include-shortcuts", include_shortcuts,
                    "count residual shortcut projections");
  count->add_option("--include-classifier", include_classifier, "count linear layers");

  // features
  auto* features = app.add_subcommand("features", "dump penultimate-layer features as CSV");
  std::string feat_out = "features.csv", feat_model;
  Index feat_limit = -1;
  features->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  features->add_option("--data-dir", data_dir, "dataset root directory");
  features->add_option("--out", feat_out, "output CSV path")->required();
  features->add_option("--model", feat_model, "teacher | student (default per mode)");
  features->add_option("--limit", feat_limit, "cap on sample count");

  // verify-theorem
  auto* verify = app.add_subcommand("verify-theorem", "series-expansion residual table");
  int max_order = 15;
  verify->add_option("--max-order", max_order, "truncation order");

  // weight-hist
  auto* whist = app.add_subcommand("weight-hist", "weight histogram + excess kurtosis");
  std::string layer;
  whist->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  whist->add_option("--layer", layer, "layer or parameter name")->required();

  // make-digits
  auto* digits = app.add_subcommand("make-digits", "write a synthetic IDX digit corpus");
  std::string digits_out = "data";
  Index digits_train = 5000, digits_test = 1000;
  std::uint64_t digits_seed = 1;
  digits->add_option("--out", digits_out, "output directory");
  digits->add_option("--train", digits_train, "training image count");
  digits->add_option("--test", digits_test, "test image count");
  digits->add_option("--seed", digits_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (*train) {
      RunConfig cfg = load_run_config(config_path);
      if (seed_opt->count() > 0) cfg.train.seed = seed_override;
      if (!mode_override.empty()) cfg.mode = train_mode_from_string(mode_override);
      if (!resume.empty()) {
        // the echoed config governs a resumed run
        RunConfig stored =
            parse_run_config(string_from_blob(find_blob(load_checkpoint(resume), "config")));
        cfg = stored;
      }
      return cfg.train.precision == "f64"
                 ? run_train<double>(cfg, data_dir, out_dir, resume)
                 : run_train<float>(cfg, data_dir, out_dir, resume);
    }
    if (*eval) {
      std::vector<NamedBlob> blobs = load_checkpoint(ckpt_path);
      RunConfig cfg = parse_run_config(string_from_blob(find_blob(blobs, "config")));
      return cfg.train.precision == "f64" ? run_eval<double>(blobs, cfg, data_dir)
                                          : run_eval<float>(blobs, cfg, data_dir);
    }
    if (*count) return run_count(arch, count_mode, include_shortcuts, include_classifier);
    if (*features) {
      std::vector<NamedBlob> blobs = load_checkpoint(ckpt_path);
      RunConfig cfg = parse_run_config(string_from_blob(find_blob(blobs, "config")));
      return cfg.train.precision == "f64"
                 ? run_features<double>(blobs, cfg, data_dir, feat_out, feat_model, feat_limit)
                 : run_features<float>(blobs, cfg, data_dir, feat_out, feat_model, feat_limit);
    }
    if (*verify) return run_verify_theorem(max_order);
    if (*whist) return run_weight_hist(ckpt_path, layer);
    if (*digits) {
      write_digit_corpus(digits_out, digits_train, digits_test, digits_seed);
      std::printf("wrote %lld train / %lld test images to %s\n",
                  static_cast<long long>(digits_train), static_cast<long long>(digits_test),
                  digits_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
