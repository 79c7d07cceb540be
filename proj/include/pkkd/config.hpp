#pragma once

#include <cstdint>
#include <string>

#include "pkkd/arch.hpp"
#include "pkkd/data.hpp"
#include "pkkd/distill.hpp"

namespace pkkd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 10;
  Index batch_size = 64;
  double base_lr = 0.1;
  std::string schedule = "cosine";
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  bool adaptive_adder_lr = true;
  std::string precision = "f32";  // "f32" or "f64"
};

enum class TrainMode { Pkkd, VanillaAnn, CnnOnly };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::MnistIdx;
  std::vector<float> mean = {0.1307f};
  std::vector<float> std = {0.3081f};
  bool augment = false;  // pad-4 crop + hflip, CIFAR recipe
};

/// Everything a training run needs besides file-system paths. The JSON
/// document mirrors these field names exactly; unknown keys are hard errors.
struct RunConfig {
  std::string arch = "lenet-2d";   // built-in name, or inline spec below
  bool arch_is_inline = false;
  ArchSpec arch_spec;              // resolved (built-in or inline)
  DatasetConfig dataset;
  TrainConfig train;
  DistillConfig distill;
  TrainMode mode = TrainMode::Pkkd;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Deterministic echo: parse(echo(c)) == c.
std::string run_config_to_json(const RunConfig& c);

ArchSpec arch_spec_from_json(const std::string& json_text);

}  // namespace pkkd
