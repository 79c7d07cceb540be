#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pkkd {

/// 64-bin histogram of a weight tensor plus its excess kurtosis
/// (Gaussian -> 0, Laplacian -> 3). Degenerate (near-zero variance)
/// distributions are flagged instead of reporting a number.
struct WeightHistogram {
  double lo = 0;
  double hi = 0;
  std::array<std::uint64_t, 64> bins{};
  double excess_kurtosis = 0;
  bool degenerate = false;
  std::uint64_t count = 0;
};

WeightHistogram weight_histogram(const std::vector<double>& values);

std::string format_weight_histogram(const WeightHistogram& h, const std::string& label);

}  // namespace pkkd
