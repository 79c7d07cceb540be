#pragma once

#include <cstdint>
#include <vector>

namespace pkkd {

/// Numerical verification of the series expansion of the Gaussian-alike
/// kernel exp(-x.f / (2 sigma^2)) into explicit finite-dimensional feature
/// maps. Everything here runs in 64-bit; this module is an oracle, not a
/// training path.

enum class PhiSide { Left, Right };

/// Number of multi-indices (n_1..n_k), n_i >= 0, sum n_i = n:
/// (n+k-1)! / (n! (k-1)!).
std::uint64_t multi_index_count(int n, int k);

/// All multi-indices with k non-negative components summing to n, in
/// lexicographic order.
std::vector<std::vector<int>> enumerate_multi_indices(int n, int k);

/// Order-n Taylor term of exp(-x.f / (2 sigma^2)):
/// (-1)^n (x.f)^n / (n! (2 sigma^2)^n). Direct evaluation up to n = 20,
/// log-space magnitude accumulation above that to dodge factorial overflow.
double series_term(const std::vector<double>& x, const std::vector<double>& f, double sigma,
                   int n);

/// Explicit order-n feature map. The left side carries the full signed
/// coefficient (-1)^n multinomial(n; m) / (n! (2 sigma^2)^n) times prod x^m;
/// the right side carries prod f^m alone, so dot(left(x), right(f)) equals
/// series_term(x, f, sigma, n) exactly in exact arithmetic. Guarded to
/// n <= 10, k <= 4.
std::vector<double> phi_map(const std::vector<double>& x, int n, double sigma, PhiSide side);

/// |exp(-x.f/(2 sigma^2)) - sum_{n=0..N} <Phi_n(x), Phi_n(f)>|. Within the
/// phi_map guard the partial sum is evaluated through the feature maps;
/// beyond it the order-n contribution falls back to series_term, which the
/// test suite verifies agrees with the feature-map route term by term.
double verify_expansion(const std::vector<double>& x, const std::vector<double>& f, double sigma,
                        int max_order);

/// Per-order rows for the residual table printed by the CLI.
struct ExpansionRow {
  int order;
  double term;
  double partial_sum;
  double residual;
};

std::vector<ExpansionRow> expansion_table(const std::vector<double>& x,
                                          const std::vector<double>& f, double sigma,
                                          int max_order);

}  // namespace pkkd
