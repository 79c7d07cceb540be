#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pkkd/tensor.hpp"

namespace pkkd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint container format:
///   magic "PKKD"
///   format version, 32-bit little-endian unsigned (currently 1)
///   tensor count, 32-bit little-endian unsigned
///   per tensor:
///     name length (32-bit LE) + UTF-8 name
///     dtype tag byte (1 = f32, 2 = f64, 3 = raw bytes, 4 = u64)
///     rank byte
///     extents as 64-bit LE unsigned
///     payload, little-endian (IEEE-754 for the float tags)
///   trailing CRC32 (32-bit LE, polynomial 0xEDB88320) of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, Bytes = 3, U64 = 4 };

struct NamedBlob {
  std::string name;
  DType dtype = DType::Bytes;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
};

std::uint32_t crc32(const std::uint8_t* data, size_t len, std::uint32_t seed = 0);

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedBlob>& blobs);
std::vector<NamedBlob> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const std::vector<NamedBlob>& blobs);
std::vector<NamedBlob> load_checkpoint(const std::string& path);

// -- adapters ---------------------------------------------------------------

template <class S>
NamedBlob blob_from_tensor(const std::string& name, const Tensor<S>& t) {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  NamedBlob b;
  b.name = name;
  b.dtype = std::is_same_v<S, float> ? DType::F32 : DType::F64;
  for (Index e : t.shape()) b.extents.push_back(static_cast<std::uint64_t>(e));
  b.payload.resize(static_cast<size_t>(t.numel()) * sizeof(S));
  std::memcpy(b.payload.data(), t.data(), b.payload.size());
  return b;
}

template <class S>
Tensor<S> tensor_from_blob(const NamedBlob& b) {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  DType want = std::is_same_v<S, float> ? DType::F32 : DType::F64;
  if (b.dtype != want)
    throw CheckpointError("tensor '" + b.name + "' has dtype tag " +
                          std::to_string(static_cast<int>(b.dtype)) + ", expected " +
                          std::to_string(static_cast<int>(want)));
  Shape shape;
  for (auto e : b.extents) shape.push_back(static_cast<Index>(e));
  Tensor<S> t(shape);
  if (b.payload.size() != static_cast<size_t>(t.numel()) * sizeof(S))
    throw CheckpointError("tensor '" + b.name + "' payload size mismatch");
  std::memcpy(t.data(), b.payload.data(), b.payload.size());
  return t;
}

NamedBlob blob_from_u64(const std::string& name, std::uint64_t v);
std::uint64_t u64_from_blob(const NamedBlob& b);
NamedBlob blob_from_string(const std::string& name, const std::string& s);
std::string string_from_blob(const NamedBlob& b);

const NamedBlob& find_blob(const std::vector<NamedBlob>& blobs, const std::string& name);
bool has_blob(const std::vector<NamedBlob>& blobs, const std::string& name);

}  // namespace pkkd
