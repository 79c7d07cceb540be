#pragma once

#include <cstdint>
#include <string>

#include "pkkd/data.hpp"

namespace pkkd {

/// Deterministic 28x28 handwriting-style digit corpus in MNIST's IDX layout.
/// Each sample renders a stroke skeleton for its class under a random affine
/// jitter (shift, scale, rotation, shear, stroke width) plus pixel noise.
/// Intended as a drop-in stand-in when the real MNIST files are not
/// available; the file format and loader path are identical.
RawImages render_digit_corpus(Index count, std::uint64_t seed,
                              std::vector<std::uint8_t>* labels_out);

/// Writes train-images-idx3-ubyte / train-labels-idx1-ubyte /
/// t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte under dir.
void write_digit_corpus(const std::string& dir, Index train_count, Index test_count,
                        std::uint64_t seed);

}  // namespace pkkd
