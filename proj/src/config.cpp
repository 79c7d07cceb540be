#include "pkkd/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pkkd {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "relu") return LayerKind::ReLU;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "gap") return LayerKind::GlobalAvgPool;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "linear") return LayerKind::Linear;
  if (s == "residual_begin") return LayerKind::ResidualBegin;
  if (s == "residual_end") return LayerKind::ResidualEnd;
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::string layer_kind_to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
    case LayerKind::ResidualBegin: return "residual_begin";
    case LayerKind::ResidualEnd: return "residual_end";
  }
  throw ConfigError("unknown layer kind");
}

ArchSpec arch_from_json_value(const json& j) {
  reject_unknown_keys(j, {"name", "input_shape", "class_count", "layers"}, "arch spec");
  ArchSpec a;
  a.name = j.at("name").get<std::string>();
  auto shape = j.at("input_shape");
  if (!shape.is_array() || shape.size() != 3)
    throw ConfigError("arch input_shape must be [H, W, C]");
  for (int i = 0; i < 3; ++i) a.input_shape[static_cast<size_t>(i)] = shape[static_cast<size_t>(i)].get<Index>();
  a.class_count = j.at("class_count").get<Index>();
  for (const json& lj : j.at("layers")) {
    reject_unknown_keys(lj, {"kind", "kernel", "channels", "stride", "padding", "units", "window"},
                        "arch layer");
    LayerDesc d;
    d.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
    d.kernel = lj.value("kernel", Index(0));
    d.channels = lj.value("channels", Index(0));
    d.stride = lj.value("stride", Index(1));
    d.pad = lj.value("padding", Index(0));
    d.units = lj.value("units", Index(0));
    d.window = lj.value("window", Index(0));
    a.layers.push_back(d);
  }
  return a;
}

json arch_to_json_value(const ArchSpec& a) {
  json j;
  j["name"] = a.name;
  j["input_shape"] = {a.input_shape[0], a.input_shape[1], a.input_shape[2]};
  j["class_count"] = a.class_count;
  json layers = json::array();
  for (const LayerDesc& d : a.layers) {
    json lj;
    lj["kind"] = layer_kind_to_string(d.kind);
    switch (d.kind) {
      case LayerKind::Conv:
        lj["kernel"] = d.kernel;
        lj["channels"] = d.channels;
        lj["stride"] = d.stride;
        lj["padding"] = d.pad;
        break;
      case LayerKind::MaxPool:
        lj["window"] = d.window;
        lj["stride"] = d.stride;
        lj["padding"] = d.pad;
        break;
      case LayerKind::Linear:
        lj["units"] = d.units;
        break;
      default:
        break;
    }
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Pkkd: return "pkkd";
    case TrainMode::VanillaAnn: return "vanilla-ann";
    case TrainMode::CnnOnly: return "cnn-only";
  }
  throw ConfigError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "pkkd") return TrainMode::Pkkd;
  if (s == "vanilla-ann") return TrainMode::VanillaAnn;
  if (s == "cnn-only") return TrainMode::CnnOnly;
  throw ConfigError("unknown mode '" + s + "' (pkkd | vanilla-ann | cnn-only)");
}

ArchSpec arch_spec_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  return arch_from_json_value(j);
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"arch", "dataset", "train", "distill", "mode"}, "config");
  RunConfig c;

  if (j.contains("arch")) {
    if (j["arch"].is_string()) {
      c.arch = j["arch"].get<std::string>();
      c.arch_spec = builtin_arch(c.arch);
    } else {
      c.arch_is_inline = true;
      c.arch_spec = arch_from_json_value(j["arch"]);
      c.arch = c.arch_spec.name;
    }
  } else {
    c.arch_spec = builtin_arch(c.arch);
  }

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    reject_unknown_keys(d, {"kind", "mean", "std", "augment"}, "dataset");
    std::string kind = d.value("kind", std::string("mnist-idx"));
    if (kind == "mnist-idx")
      c.dataset.kind = DatasetKind::MnistIdx;
    else if (kind == "cifar10-binary") {
      c.dataset.kind = DatasetKind::Cifar10Binary;
      c.dataset.mean = {0.4914f, 0.4822f, 0.4465f};
      c.dataset.std = {0.2470f, 0.2435f, 0.2616f};
    } else
      throw ConfigError("unknown dataset kind '" + kind + "'");
    if (d.contains("mean")) c.dataset.mean = d["mean"].get<std::vector<float>>();
    if (d.contains("std")) c.dataset.std = d["std"].get<std::vector<float>>();
    c.dataset.augment = d.value("augment", c.dataset.kind == DatasetKind::Cifar10Binary);
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown_keys(t,
                        {"epochs", "batch_size", "base_lr", "schedule", "momentum",
                         "weight_decay", "seed", "adaptive_adder_lr", "precision"},
                        "train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.base_lr = t.value("base_lr", c.train.base_lr);
    c.train.schedule = t.value("schedule", c.train.schedule);
    c.train.momentum = t.value("momentum", c.train.momentum);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.adaptive_adder_lr = t.value("adaptive_adder_lr", c.train.adaptive_adder_lr);
    c.train.precision = t.value("precision", c.train.precision);
    if (c.train.schedule != "cosine")
      throw ConfigError("unknown schedule '" + c.train.schedule + "' (only cosine is supported)");
    if (c.train.precision != "f32" && c.train.precision != "f64")
      throw ConfigError("precision must be f32 or f64");
    if (c.train.batch_size < 2) throw ConfigError("batch_size must be >= 2 (batchnorm)");
    if (c.train.base_lr < 0 || c.train.momentum < 0 || c.train.weight_decay < 0)
      throw ConfigError("rates and decays must be non-negative");
  }

  if (j.contains("distill")) {
    const json& d = j["distill"];
    reject_unknown_keys(d, {"alpha", "beta", "temperature", "tap_layers"}, "distill");
    c.distill.alpha = d.value("alpha", c.distill.alpha);
    c.distill.beta = d.value("beta", c.distill.beta);
    c.distill.temperature = d.value("temperature", c.distill.temperature);
    if (d.contains("tap_layers")) c.distill.tap_layers = d["tap_layers"].get<std::vector<int>>();
    if (c.distill.alpha < 0 || c.distill.beta < 0)
      throw ConfigError("alpha and beta must be non-negative");
    if (!(c.distill.temperature > 0)) throw ConfigError("temperature must be positive");
  }

  if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  if (c.arch_is_inline)
    j["arch"] = arch_to_json_value(c.arch_spec);
  else
    j["arch"] = c.arch;
  j["dataset"]["kind"] = c.dataset.kind == DatasetKind::MnistIdx ? "mnist-idx" : "cifar10-binary";
  j["dataset"]["mean"] = c.dataset.mean;
  j["dataset"]["std"] = c.dataset.std;
  j["dataset"]["augment"] = c.dataset.augment;
  j["train"]["epochs"] = c.train.epochs;
  j["train"]["batch_size"] = c.train.batch_size;
  j["train"]["base_lr"] = c.train.base_lr;
  j["train"]["schedule"] = c.train.schedule;
  j["train"]["momentum"] = c.train.momentum;
  j["train"]["weight_decay"] = c.train.weight_decay;
  j["train"]["seed"] = c.train.seed;
  j["train"]["adaptive_adder_lr"] = c.train.adaptive_adder_lr;
  j["train"]["precision"] = c.train.precision;
  j["distill"]["alpha"] = c.distill.alpha;
  j["distill"]["beta"] = c.distill.beta;
  j["distill"]["temperature"] = c.distill.temperature;
  j["distill"]["tap_layers"] = c.distill.tap_layers;
  j["mode"] = to_string(c.mode);
  return j.dump(2);
}

}  // namespace pkkd
