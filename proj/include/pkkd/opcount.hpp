#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pkkd/arch.hpp"

namespace pkkd {

enum class CountMode { Cnn, Ann };

struct CountOptions {
  /// Count 1x1 projection convolutions on residual shortcuts. The published
  /// tables track the main path only, so the default leaves them out.
  bool include_shortcuts = false;
  /// Count linear (classifier-head) layers.
  bool include_classifier = true;
};

struct LayerCount {
  std::string name;
  std::uint64_t mul = 0;
  std::uint64_t add = 0;
};

struct OpCountReport {
  std::uint64_t mul = 0;
  std::uint64_t add = 0;
  std::vector<LayerCount> per_layer;
};

/// Static multiplication/addition counts for one forward pass of a single
/// sample. Convention: a conv/linear connection is one MAC (1 mul + 1 add);
/// an adder connection is one subtraction plus one accumulation (2 adds,
/// absolute value free). In ANN mode the interior convs are adder layers
/// while stem, shortcuts and linear layers keep their CNN cost. Batchnorm,
/// pooling and activations are not counted.
OpCountReport count_ops(const ArchSpec& spec, CountMode mode, CountOptions opts = {});
OpCountReport count_ops(const ModelPlan& plan, CountMode mode, CountOptions opts = {});

std::string format_count(std::uint64_t ops);

}  // namespace pkkd
