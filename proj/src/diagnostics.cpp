#include "pkkd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pkkd {

WeightHistogram weight_histogram(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("weight_histogram: no values");
  WeightHistogram h;
  h.count = values.size();
  const double n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0, m4 = 0;
  for (double v : values) {
    double d = v - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;

  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  double span = h.hi - h.lo;
  if (span <= 0) span = 1;
  for (double v : values) {
    auto b = static_cast<size_t>((v - h.lo) / span * 64.0);
    if (b >= 64) b = 63;
    ++h.bins[b];
  }

  if (m2 < 1e-24) {
    h.degenerate = true;
    return h;
  }
  h.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  return h;
}

std::string format_weight_histogram(const WeightHistogram& h, const std::string& label) {
  std::ostringstream os;
  os << "# layer: " << label << "\n";
  os << "# count: " << h.count << "\n";
  if (h.degenerate)
    os << "# excess_kurtosis: degenerate (near-zero variance)\n";
  else
    os << "# excess_kurtosis: " << h.excess_kurtosis << "\n";
  os << "bin_lo,bin_hi,count\n";
  double width = (h.hi - h.lo) / 64.0;
  for (size_t b = 0; b < h.bins.size(); ++b)
    os << h.lo + width * static_cast<double>(b) << ',' << h.lo + width * static_cast<double>(b + 1)
       << ',' << h.bins[b] << "\n";
  return os.str();
}

}  // namespace pkkd
