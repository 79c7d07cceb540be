#include "pkkd/kernel_theory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pkkd {

namespace {

double dot(const std::vector<double>& x, const std::vector<double>& f) {
  if (x.size() != f.size())
    throw std::invalid_argument("kernel_theory: vectors must have equal length");
  double d = 0;
  for (size_t i = 0; i < x.size(); ++i) d += x[i] * f[i];
  return d;
}

double factorial(int n) {
  double r = 1;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

void check_guard(int n, int k) {
  if (n < 0) throw std::invalid_argument("kernel_theory: order must be non-negative");
  if (n > 10 || k > 4)
    throw std::invalid_argument("kernel_theory: phi_map guard violated (n <= 10, k <= 4), got n=" +
                                std::to_string(n) + " k=" + std::to_string(k));
}

}  // namespace

std::uint64_t multi_index_count(int n, int k) {
  // C(n+k-1, k-1)
  std::uint64_t r = 1;
  for (int i = 1; i <= k - 1; ++i) r = r * static_cast<std::uint64_t>(n + i) / i;
  return r;
}

std::vector<std::vector<int>> enumerate_multi_indices(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<size_t>(k), 0);
  // lexicographic order over the component vector, descending first slot last:
  // recurse left to right assigning each component 0..remaining
  struct Rec {
    int k;
    std::vector<std::vector<int>>* out;
    std::vector<int>* cur;
    void operator()(int pos, int remaining) {
      if (pos == k - 1) {
        (*cur)[static_cast<size_t>(pos)] = remaining;
        out->push_back(*cur);
        return;
      }
      for (int v = 0; v <= remaining; ++v) {
        (*cur)[static_cast<size_t>(pos)] = v;
        (*this)(pos + 1, remaining - v);
      }
    }
  };
  Rec{k, &out, &cur}(0, n);
  return out;
}

double series_term(const std::vector<double>& x, const std::vector<double>& f, double sigma,
                   int n) {
  if (!(sigma > 0)) throw std::invalid_argument("series_term: sigma must be positive");
  if (n < 0) throw std::invalid_argument("series_term: order must be non-negative");
  double a = dot(x, f) / (2.0 * sigma * sigma);
  double sign = (n % 2 == 0) ? 1.0 : -1.0;
  if (n <= 20) return sign * std::pow(a, n) / factorial(n);
  // log-space accumulation of |a|^n / n!
  if (a == 0.0) return 0.0;
  double log_mag = n * std::log(std::abs(a)) - std::lgamma(static_cast<double>(n) + 1.0);
  double mag_sign = (a < 0 && n % 2 == 1) ? -1.0 : 1.0;
  return sign * mag_sign * std::exp(log_mag);
}

std::vector<double> phi_map(const std::vector<double>& x, int n, double sigma, PhiSide side) {
  check_guard(n, static_cast<int>(x.size()));
  if (!(sigma > 0)) throw std::invalid_argument("phi_map: sigma must be positive");
  const int k = static_cast<int>(x.size());
  auto indices = enumerate_multi_indices(n, k);
  std::vector<double> out;
  out.reserve(indices.size());
  const double nfact = factorial(n);
  const double denom = nfact * std::pow(2.0 * sigma * sigma, n);
  const double sign = (n % 2 == 0) ? 1.0 : -1.0;
  for (const auto& m : indices) {
    double mono = 1.0;
    for (int i = 0; i < k; ++i) mono *= std::pow(x[static_cast<size_t>(i)], m[static_cast<size_t>(i)]);
    if (side == PhiSide::Right) {
      out.push_back(mono);
    } else {
      double multinomial = nfact;
      for (int i = 0; i < k; ++i) multinomial /= factorial(m[static_cast<size_t>(i)]);
      out.push_back(sign * multinomial / denom * mono);
    }
  }
  return out;
}

namespace {

double order_contribution(const std::vector<double>& x, const std::vector<double>& f,
                          double sigma, int n) {
  if (n <= 10 && static_cast<int>(x.size()) <= 4) {
    auto left = phi_map(x, n, sigma, PhiSide::Left);
    auto right = phi_map(f, n, sigma, PhiSide::Right);
    double d = 0;
    for (size_t i = 0; i < left.size(); ++i) d += left[i] * right[i];
    return d;
  }
  return series_term(x, f, sigma, n);
}

}  // namespace

double verify_expansion(const std::vector<double>& x, const std::vector<double>& f, double sigma,
                        int max_order) {
  if (max_order < 0) throw std::invalid_argument("verify_expansion: negative order");
  double target = std::exp(-dot(x, f) / (2.0 * sigma * sigma));
  double sum = 0;
  for (int n = 0; n <= max_order; ++n) sum += order_contribution(x, f, sigma, n);
  return std::abs(target - sum);
}

std::vector<ExpansionRow> expansion_table(const std::vector<double>& x,
                                          const std::vector<double>& f, double sigma,
                                          int max_order) {
  double target = std::exp(-dot(x, f) / (2.0 * sigma * sigma));
  std::vector<ExpansionRow> rows;
  double sum = 0;
  for (int n = 0; n <= max_order; ++n) {
    double term = order_contribution(x, f, sigma, n);
    sum += term;
    rows.push_back({n, term, sum, std::abs(target - sum)});
  }
  return rows;
}

}  // namespace pkkd
