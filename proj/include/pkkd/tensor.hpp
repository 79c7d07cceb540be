#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pkkd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class Scalar>
using FlatArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw TensorError("tensor shape has non-positive extent");
    n *= e;
  }
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major n-d array over a flat Eigen buffer. NHWC is the layout
/// convention for image batches throughout.
template <class Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(FlatArray<Scalar>::Zero(shape_numel(shape_))) {}

  Tensor(Shape shape, FlatArray<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw TensorError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_to_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : shape_(std::move(shape)), data_(values.size()) {
    if (shape_numel(shape_) != static_cast<Index>(values.size()))
      throw TensorError("initializer length does not match shape " + shape_to_string(shape_));
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Tensor scalar(Scalar v) {
    Tensor t(Shape{1});
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<size_t>(i)); }
  Index numel() const { return data_.size(); }

  FlatArray<Scalar>& array() { return data_; }
  const FlatArray<Scalar>& array() const { return data_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Value of a single-element tensor.
  Scalar item() const {
    if (numel() != 1) throw TensorError("item() on tensor of size " + std::to_string(numel()));
    return data_[0];
  }

  // NHWC accessors.
  Scalar& operator()(Index n, Index y, Index x, Index c) {
    return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }
  Scalar operator()(Index n, Index y, Index x, Index c) const {
    return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }
  Scalar& operator()(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar operator()(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw TensorError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape) +
                        " changes element count");
    return Tensor(std::move(shape), data_);
  }

  template <class Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  /// Row-major matrix view of a rank-2 tensor (or [rows, cols] split of the
  /// flat buffer); no copy.
  Eigen::Map<MatrixRM<Scalar>> matrix(Index rows, Index cols) {
    if (rows * cols != numel()) throw TensorError("matrix view does not cover tensor");
    return Eigen::Map<MatrixRM<Scalar>>(data_.data(), rows, cols);
  }
  Eigen::Map<const MatrixRM<Scalar>> matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw TensorError("matrix view does not cover tensor");
    return Eigen::Map<const MatrixRM<Scalar>>(data_.data(), rows, cols);
  }

 private:
  Shape shape_;
  FlatArray<Scalar> data_;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. SplitMix64 gives a portable, serializable stream; all
// randomness in the engine (init, shuffling, augmentation) derives from it so
// runs are reproducible bit-for-bit from a single seed.
// ---------------------------------------------------------------------------

struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Box-Muller without state: two draws per number keeps the stream layout
  /// independent of call history.
  double normal(double mu, double sigma) {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * M_PI * u2);
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Independent child stream for a tagged purpose (model/parameter/epoch...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  SplitMix64 rng(seed ^ fnv1a64(tag));
  return rng.next();
}

// ---------------------------------------------------------------------------
// Seeded initialization schemes.
// ---------------------------------------------------------------------------

enum class InitKind { KaimingUniform, Zeros, Ones, Normal };

struct InitScheme {
  InitKind kind = InitKind::Zeros;
  double mu = 0.0;
  double sigma = 1.0;
  /// Fan-in override for KaimingUniform; <= 0 derives it from the shape
  /// (conv [d,d,cin,cout] -> d*d*cin, matrix [in,out] -> in, vector -> numel).
  Index fan_in = 0;

  static InitScheme kaiming_uniform(Index fan_in = 0) {
    return {InitKind::KaimingUniform, 0.0, 1.0, fan_in};
  }
  static InitScheme zeros() { return {InitKind::Zeros}; }
  static InitScheme ones() { return {InitKind::Ones}; }
  static InitScheme normal(double mu, double sigma) { return {InitKind::Normal, mu, sigma, 0}; }
};

inline Index derive_fan_in(const Shape& shape) {
  if (shape.size() == 4) return shape[0] * shape[1] * shape[2];
  if (shape.size() == 2) return shape[0];
  return shape_numel(shape);
}

template <class Scalar>
Tensor<Scalar> seeded_init(Shape shape, const InitScheme& scheme, std::uint64_t seed) {
  Tensor<Scalar> t(std::move(shape));
  SplitMix64 rng(derive_seed(seed, "init"));
  switch (scheme.kind) {
    case InitKind::Zeros:
      break;
    case InitKind::Ones:
      t.array().setOnes();
      break;
    case InitKind::KaimingUniform: {
      Index fan_in = scheme.fan_in > 0 ? scheme.fan_in : derive_fan_in(t.shape());
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (Index i = 0; i < t.numel(); ++i)
        t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
      break;
    }
    case InitKind::Normal:
      for (Index i = 0; i < t.numel(); ++i)
        t[i] = static_cast<Scalar>(rng.normal(scheme.mu, scheme.sigma));
      break;
    default:
      throw TensorError("unknown init scheme");
  }
  return t;
}

}  // namespace pkkd
