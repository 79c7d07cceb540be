#include "pkkd/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace pkkd {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'K', 'K', 'D'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw CheckpointError("truncated checkpoint: needed " + std::to_string(n) + " bytes for " +
                            what + " at offset " + std::to_string(pos));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos++]) << (8 * i);
    return v;
  }
};

size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
      return 4;
    case DType::F64:
    case DType::U64:
      return 8;
    case DType::Bytes:
      return 1;
  }
  throw CheckpointError("unknown dtype tag");
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, size_t len, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedBlob>& blobs) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const NamedBlob& b : blobs) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    out.push_back(static_cast<std::uint8_t>(b.dtype));
    out.push_back(static_cast<std::uint8_t>(b.extents.size()));
    for (std::uint64_t e : b.extents) put_u64(out, e);
    if (b.payload.size() != b.numel() * dtype_size(b.dtype))
      throw CheckpointError("blob '" + b.name + "' payload does not match extents");
    out.insert(out.end(), b.payload.begin(), b.payload.end());
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

std::vector<NamedBlob> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
    throw CheckpointError("bad magic at offset 0: not a PKKD checkpoint");
  if (bytes.size() < 4) throw CheckpointError("truncated checkpoint");
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= std::uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
  std::uint32_t actual = crc32(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual)
    throw CheckpointError("checksum failure: stored " + std::to_string(stored_crc) +
                          ", computed " + std::to_string(actual));
  r.pos = 4;
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("format version mismatch: file has " + std::to_string(version) +
                          ", this build reads " + std::to_string(kCheckpointVersion));
  std::uint32_t count = r.u32("tensor count");
  std::vector<NamedBlob> blobs;
  blobs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob b;
    std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    b.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    std::uint8_t tag = r.u8("dtype tag");
    if (tag < 1 || tag > 4)
      throw CheckpointError("unknown dtype tag " + std::to_string(int(tag)) + " for tensor '" +
                            b.name + "'");
    b.dtype = static_cast<DType>(tag);
    std::uint8_t rank = r.u8("rank");
    for (std::uint8_t d = 0; d < rank; ++d) b.extents.push_back(r.u64("extent"));
    size_t payload = static_cast<size_t>(b.numel()) * dtype_size(b.dtype);
    r.need(payload, "payload");
    b.payload.assign(bytes.begin() + static_cast<long>(r.pos),
                     bytes.begin() + static_cast<long>(r.pos + payload));
    r.pos += payload;
    blobs.push_back(std::move(b));
  }
  if (r.pos != bytes.size() - 4)
    throw CheckpointError("trailing bytes after tensor data at offset " + std::to_string(r.pos));
  return blobs;
}

void save_checkpoint(const std::string& path, const std::vector<NamedBlob>& blobs) {
  std::vector<std::uint8_t> bytes = encode_checkpoint(blobs);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!f) throw CheckpointError("write failure on '" + path + "'");
}

std::vector<NamedBlob> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

NamedBlob blob_from_u64(const std::string& name, std::uint64_t v) {
  NamedBlob b;
  b.name = name;
  b.dtype = DType::U64;
  b.extents = {1};
  b.payload.resize(8);
  for (int i = 0; i < 8; ++i) b.payload[static_cast<size_t>(i)] = std::uint8_t(v >> (8 * i));
  return b;
}

std::uint64_t u64_from_blob(const NamedBlob& b) {
  if (b.dtype != DType::U64 || b.payload.size() != 8)
    throw CheckpointError("blob '" + b.name + "' is not a u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b.payload[static_cast<size_t>(i)]) << (8 * i);
  return v;
}

NamedBlob blob_from_string(const std::string& name, const std::string& s) {
  NamedBlob b;
  b.name = name;
  b.dtype = DType::Bytes;
  b.extents = {s.size()};
  b.payload.assign(s.begin(), s.end());
  return b;
}

std::string string_from_blob(const NamedBlob& b) {
  if (b.dtype != DType::Bytes) throw CheckpointError("blob '" + b.name + "' is not a byte string");
  return std::string(b.payload.begin(), b.payload.end());
}

const NamedBlob& find_blob(const std::vector<NamedBlob>& blobs, const std::string& name) {
  for (const NamedBlob& b : blobs)
    if (b.name == name) return b;
  throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

bool has_blob(const std::vector<NamedBlob>& blobs, const std::string& name) {
  for (const NamedBlob& b : blobs)
    if (b.name == name) return true;
  return false;
}

}  // namespace pkkd
