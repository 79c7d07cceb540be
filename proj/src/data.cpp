#include "pkkd/data.hpp"

#include <filesystem>
#include <fstream>

namespace pkkd {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, size_t pos, const char* what) {
  if (pos + 4 > b.size())
    throw DataError(std::string("truncated IDX header while reading ") + what);
  return (std::uint32_t(b[pos]) << 24) | (std::uint32_t(b[pos + 1]) << 16) |
         (std::uint32_t(b[pos + 2]) << 8) | std::uint32_t(b[pos + 3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  char buf[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  f.write(buf, 4);
}

Dataset normalize(RawImages raw, std::vector<std::uint8_t> labels,
                  const std::vector<float>& mean, const std::vector<float>& std) {
  if (static_cast<size_t>(raw.n) != labels.size())
    throw DataError("image count " + std::to_string(raw.n) + " != label count " +
                    std::to_string(labels.size()));
  if (mean.size() != static_cast<size_t>(raw.c) || std.size() != static_cast<size_t>(raw.c))
    throw DataError("normalization constants must have one entry per channel");
  Dataset d;
  d.images = Tensor<float>({raw.n, raw.h, raw.w, raw.c});
  const Index per_image = raw.h * raw.w * raw.c;
  for (Index i = 0; i < raw.n * per_image; ++i) {
    Index c = i % raw.c;
    float v = float(raw.pixels[static_cast<size_t>(i)]) / 255.0f;
    d.images[i] = (v - mean[static_cast<size_t>(c)]) / std[static_cast<size_t>(c)];
  }
  d.labels.reserve(labels.size());
  for (std::uint8_t l : labels) d.labels.push_back(int(l));
  return d;
}

}  // namespace

RawImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != kIdxImagesMagic)
    throw DataError("bad IDX image magic " + std::to_string(magic) + " (expected 2051)");
  RawImages r;
  r.n = read_be32(bytes, 4, "count");
  r.h = read_be32(bytes, 8, "rows");
  r.w = read_be32(bytes, 12, "cols");
  r.c = 1;
  size_t expected = 16 + static_cast<size_t>(r.n) * r.h * r.w;
  if (bytes.size() < expected)
    throw DataError("truncated IDX image payload: have " + std::to_string(bytes.size()) +
                    " bytes, need " + std::to_string(expected));
  r.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<long>(expected));
  return r;
}

std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != kIdxLabelsMagic)
    throw DataError("bad IDX label magic " + std::to_string(magic) + " (expected 2049)");
  std::uint32_t n = read_be32(bytes, 4, "count");
  size_t expected = 8 + n;
  if (bytes.size() < expected) throw DataError("truncated IDX label payload");
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + static_cast<long>(expected));
}

void write_idx_images(const std::string& path, const RawImages& images) {
  if (images.c != 1) throw DataError("IDX images are single channel");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_be32(f, kIdxImagesMagic);
  write_be32(f, static_cast<std::uint32_t>(images.n));
  write_be32(f, static_cast<std::uint32_t>(images.h));
  write_be32(f, static_cast<std::uint32_t>(images.w));
  f.write(reinterpret_cast<const char*>(images.pixels.data()),
          static_cast<long>(images.pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_be32(f, kIdxLabelsMagic);
  write_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()), static_cast<long>(labels.size()));
}

Dataset load_mnist(const std::string& root, Split split, const std::vector<float>& mean,
                   const std::vector<float>& std) {
  const char* img_name = split == Split::Train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  const char* lbl_name = split == Split::Train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
  auto img_path = std::filesystem::path(root) / img_name;
  auto lbl_path = std::filesystem::path(root) / lbl_name;
  RawImages raw = parse_idx_images(read_file(img_path.string()));
  std::vector<std::uint8_t> labels = parse_idx_labels(read_file(lbl_path.string()));
  for (std::uint8_t l : labels)
    if (l > 9) throw DataError("label byte " + std::to_string(int(l)) + " out of range 0..9");
  return normalize(std::move(raw), std::move(labels), mean, std);
}

Dataset load_cifar10(const std::string& root, Split split, const std::vector<float>& mean,
                     const std::vector<float>& std) {
  constexpr size_t kRecord = 3073;
  std::vector<std::string> files;
  if (split == Split::Train)
    for (int i = 1; i <= 5; ++i)
      files.push_back((std::filesystem::path(root) / ("data_batch_" + std::to_string(i) + ".bin"))
                          .string());
  else
    files.push_back((std::filesystem::path(root) / "test_batch.bin").string());

  RawImages raw;
  raw.h = 32;
  raw.w = 32;
  raw.c = 3;
  std::vector<std::uint8_t> labels;
  for (const std::string& path : files) {
    std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() % kRecord != 0)
      throw DataError("'" + path + "' length " + std::to_string(bytes.size()) +
                      " is not divisible by 3073");
    size_t records = bytes.size() / kRecord;
    for (size_t rec = 0; rec < records; ++rec) {
      const std::uint8_t* p = bytes.data() + rec * kRecord;
      if (p[0] > 9)
        throw DataError("'" + path + "' record " + std::to_string(rec) + " has label byte " +
                        std::to_string(int(p[0])) + " > 9");
      labels.push_back(p[0]);
      // channel-planar (R plane, G plane, B plane) -> NHWC
      for (Index y = 0; y < 32; ++y)
        for (Index x = 0; x < 32; ++x)
          for (Index c = 0; c < 3; ++c)
            raw.pixels.push_back(p[1 + c * 1024 + y * 32 + x]);
    }
  }
  raw.n = static_cast<Index>(labels.size());
  return normalize(std::move(raw), std::move(labels), mean, std);
}

Dataset load_dataset(const DatasetSource& source) {
  switch (source.kind) {
    case DatasetKind::MnistIdx:
      return load_mnist(source.root, source.split, source.mean, source.std);
    case DatasetKind::Cifar10Binary:
      return load_cifar10(source.root, source.split, source.mean, source.std);
  }
  throw DataError("unknown dataset kind");
}

Tensor<float> augment_image(const Tensor<float>& images, Index index,
                            const AugmentPolicy& policy, std::uint64_t seed,
                            std::uint64_t epoch) {
  const Index H = images.dim(1), W = images.dim(2), C = images.dim(3);
  Tensor<float> out({1, H, W, C});
  if (!policy.enabled) {
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        for (Index c = 0; c < C; ++c) out(0, y, x, c) = images(index, y, x, c);
    return out;
  }
  SplitMix64 rng(derive_seed(derive_seed(seed, "augment"),
                             std::to_string(epoch) + ":" + std::to_string(index)));
  Index dy = static_cast<Index>(rng.next() % std::uint64_t(2 * policy.pad + 1)) - policy.pad;
  Index dx = static_cast<Index>(rng.next() % std::uint64_t(2 * policy.pad + 1)) - policy.pad;
  bool flip = rng.uniform01() < policy.hflip_prob;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      Index sx = flip ? W - 1 - x : x;
      Index oy = y + dy, ox = sx + dx;
      for (Index c = 0; c < C; ++c)
        out(0, y, x, c) = (oy >= 0 && oy < H && ox >= 0 && ox < W) ? images(index, oy, ox, c)
                                                                   : 0.0f;
    }
  return out;
}

std::vector<Index> epoch_order(Index n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> order(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  SplitMix64 rng(derive_seed(derive_seed(seed, "shuffle"), std::to_string(epoch)));
  for (Index i = n - 1; i > 0; --i) {
    Index j = static_cast<Index>(rng.next() % std::uint64_t(i + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

Batch make_batch(const Dataset& data, const std::vector<Index>& order, Index start, Index count,
                 const AugmentPolicy& policy, std::uint64_t seed, std::uint64_t epoch) {
  const Index H = data.images.dim(1), W = data.images.dim(2), C = data.images.dim(3);
  Batch b;
  b.images = Tensor<float>({count, H, W, C});
  b.labels.resize(static_cast<size_t>(count));
  const Index per_image = H * W * C;
  for (Index i = 0; i < count; ++i) {
    Index src = order[static_cast<size_t>(start + i)];
    Tensor<float> img = augment_image(data.images, src, policy, seed, epoch);
    std::copy(img.data(), img.data() + per_image, b.images.data() + i * per_image);
    b.labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
  }
  return b;
}

}  // namespace pkkd
