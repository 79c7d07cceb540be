#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pkkd/tensor.hpp"

namespace pkkd {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { MnistIdx, Cifar10Binary };
enum class Split { Train, Test };

struct DatasetSource {
  DatasetKind kind = DatasetKind::MnistIdx;
  std::string root;
  Split split = Split::Train;
  std::vector<float> mean = {0.1307f};
  std::vector<float> std = {0.3081f};
};

struct Dataset {
  Tensor<float> images;  // [N,H,W,C], normalized
  std::vector<int> labels;

  Index size() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

/// Raw decoded pixels before normalization; useful for format-level tests.
struct RawImages {
  Index n = 0, h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> pixels;  // NHWC
};

// IDX parsing (big-endian headers; magic 2051 for images, 2049 for labels)
RawImages parse_idx_images(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes);
void write_idx_images(const std::string& path, const RawImages& images);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Classic four-file MNIST layout under root (train-images-idx3-ubyte, ...).
Dataset load_mnist(const std::string& root, Split split,
                   const std::vector<float>& mean = {0.1307f},
                   const std::vector<float>& std = {0.3081f});

/// CIFAR-10 binary batches under root (data_batch_1..5.bin / test_batch.bin);
/// 3073-byte records: label byte + 3072 channel-planar pixels.
Dataset load_cifar10(const std::string& root, Split split,
                     const std::vector<float>& mean = {0.4914f, 0.4822f, 0.4465f},
                     const std::vector<float>& std = {0.2470f, 0.2435f, 0.2616f});

Dataset load_dataset(const DatasetSource& source);

/// Pad-4 random crop plus horizontal flip; a pure function of
/// (seed, epoch, sample index), so augmentation replays identically across
/// resumed runs. Test splits are never augmented by the trainer.
struct AugmentPolicy {
  bool enabled = false;
  Index pad = 4;
  double hflip_prob = 0.5;
};

Tensor<float> augment_image(const Tensor<float>& images, Index index,
                            const AugmentPolicy& policy, std::uint64_t seed,
                            std::uint64_t epoch);

/// Deterministic epoch shuffle (Fisher-Yates on a derived stream).
std::vector<Index> epoch_order(Index n, std::uint64_t seed, std::uint64_t epoch);

/// Gather a batch (optionally augmented) as [B,H,W,C] plus labels.
struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& data, const std::vector<Index>& order, Index start, Index count,
                 const AugmentPolicy& policy, std::uint64_t seed, std::uint64_t epoch);

}  // namespace pkkd
