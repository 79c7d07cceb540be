#include <doctest.h>

#include <cmath>

#include "pkkd/kernel_theory.hpp"
#include "pkkd/tensor.hpp"

using namespace pkkd;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d;
}

std::vector<double> random_vec(int k, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(k));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("multi_index_count matches the closed form and the enumeration") {
  CHECK(multi_index_count(0, 1) == 1);
  CHECK(multi_index_count(1, 2) == 2);
  CHECK(multi_index_count(3, 3) == 10);  // 5!/(3!2!)
  for (int n = 0; n <= 6; ++n)
    for (int k = 1; k <= 4; ++k) {
      auto idx = enumerate_multi_indices(n, k);
      CHECK(idx.size() == multi_index_count(n, k));
      for (const auto& m : idx) {
        int s = 0;
        for (int c : m) {
          CHECK(c >= 0);
          s += c;
        }
        CHECK(s == n);
      }
      // lexicographic order, no duplicates
      for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i - 1] < idx[i]);
    }
}

TEST_CASE("series_term: zeroth term, hand value, convergence to exp") {
  SplitMix64 rng(3);
  auto x = random_vec(3, rng);
  auto f = random_vec(3, rng);
  CHECK(series_term(x, f, 0.8, 0) == 1.0);

  // x = f = [1], sigma^2 = 0.5 -> 2 sigma^2 = 1: term_1 = -1
  std::vector<double> one = {1.0};
  double sigma = std::sqrt(0.5);
  CHECK(series_term(one, one, sigma, 1) == doctest::Approx(-1.0).epsilon(1e-15));

  double partial = 0;
  for (int n = 0; n <= 12; ++n) partial += series_term(one, one, sigma, n);
  CHECK(std::abs(partial - std::exp(-1.0)) <= 1e-9);

  CHECK_THROWS(series_term(one, one, 0.0, 1));
  CHECK_THROWS(series_term(one, {1.0, 2.0}, 1.0, 1));
}

TEST_CASE("series_term: log-space route above n = 20 is continuous") {
  std::vector<double> x = {0.7, -0.2};
  std::vector<double> f = {0.5, 0.9};
  // ratio between consecutive terms matches -a/(n+1) across the switchover
  double a = dot(x, f) / (2.0 * 0.8 * 0.8);
  for (int n = 19; n <= 22; ++n) {
    double t_n = series_term(x, f, 0.8, n);
    double t_next = series_term(x, f, 0.8, n + 1);
    CHECK(t_next == doctest::Approx(t_n * (-a) / (n + 1)).epsilon(1e-10));
  }
}

TEST_CASE("phi_map: component counts, trivial orders, inner-product identity") {
  std::vector<double> x = {0.4, -0.6, 0.9};
  std::vector<double> f = {0.2, 0.8, -0.5};
  double sigma = 0.9;

  auto l0 = phi_map(x, 0, sigma, PhiSide::Left);
  auto r0 = phi_map(f, 0, sigma, PhiSide::Right);
  REQUIRE(l0.size() == 1);
  CHECK(l0[0] == 1.0);
  CHECK(r0[0] == 1.0);

  CHECK(phi_map({0.3, 0.4}, 1, sigma, PhiSide::Left).size() == 2);

  SplitMix64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    int k = 1 + static_cast<int>(rng.next() % 3);
    int n = static_cast<int>(rng.next() % 5);
    auto xv = random_vec(k, rng);
    auto fv = random_vec(k, rng);
    auto left = phi_map(xv, n, sigma, PhiSide::Left);
    auto right = phi_map(fv, n, sigma, PhiSide::Right);
    REQUIRE(left.size() == multi_index_count(n, k));
    double d = 0;
    for (size_t i = 0; i < left.size(); ++i) d += left[i] * right[i];
    CHECK(std::abs(d - series_term(xv, fv, sigma, n)) <= 1e-12);
  }

  CHECK_THROWS(phi_map(x, 11, sigma, PhiSide::Left));                    // order guard
  CHECK_THROWS(phi_map(random_vec(5, rng), 2, sigma, PhiSide::Left));    // arity guard
}

TEST_CASE("verify_expansion: convergence, orthogonal vectors, monotone residual") {
  SplitMix64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    int k = 1 + static_cast<int>(rng.next() % 3);
    auto x = random_vec(k, rng);
    auto f = random_vec(k, rng);
    double sigma = rng.uniform(0.8, 1.3);
    if (std::abs(dot(x, f)) / (2 * sigma * sigma) > 2.0) continue;
    CHECK(verify_expansion(x, f, sigma, 15) <= 1e-9);
  }

  // x.f = 0: every term beyond order 0 vanishes
  CHECK(verify_expansion({1.0, 0.0}, {0.0, 1.0}, 1.0, 0) == 0.0);

  // residual non-increasing in N once terms shrink (a <= 1 regime)
  std::vector<double> x = {0.6, 0.5};
  std::vector<double> f = {0.7, 0.4};
  double sigma = 0.85;
  REQUIRE(dot(x, f) / (2 * sigma * sigma) <= 1.0);
  double prev = 1e300;
  for (int n = 0; n <= 12; ++n) {
    double r = verify_expansion(x, f, sigma, n);
    CHECK(r <= prev + 1e-18);
    prev = r;
  }
}

TEST_CASE("feature-map and series routes agree term by term") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_vec(3, rng);
    auto f = random_vec(3, rng);
    double sigma = rng.uniform(0.7, 1.2);
    double sum_phi = 0, sum_series = 0;
    for (int n = 0; n <= 8; ++n) {
      auto left = phi_map(x, n, sigma, PhiSide::Left);
      auto right = phi_map(f, n, sigma, PhiSide::Right);
      for (size_t i = 0; i < left.size(); ++i) sum_phi += left[i] * right[i];
      sum_series += series_term(x, f, sigma, n);
    }
    CHECK(std::abs(sum_phi - sum_series) <= 1e-12);
  }
}

TEST_CASE("expansion_table rows are self-consistent") {
  auto rows = expansion_table({1.0}, {1.0}, std::sqrt(0.5), 12);
  REQUIRE(rows.size() == 13);
  double s = 0;
  for (const auto& r : rows) {
    s += r.term;
    CHECK(r.partial_sum == doctest::Approx(s).epsilon(1e-15));
  }
  CHECK(rows.back().residual <= 1e-9);
}
