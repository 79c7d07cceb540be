#pragma once

#include <sstream>
#include <string>

#include "pkkd/data.hpp"
#include "pkkd/model.hpp"

namespace pkkd {

/// CSV of penultimate-layer activations over the dataset, one row per sample
/// in dataset order: id,label,f1,...,fk. For lenet-2d the feature width is 2.
template <class S>
std::string dump_features(Model<S>& model, const Dataset& data, Index limit = -1) {
  if (model.plan.penultimate_units < 1)
    throw ArchError("architecture has no designated penultimate layer");
  const Index n = limit >= 0 ? std::min<Index>(limit, data.size()) : data.size();
  std::ostringstream os;
  os << "id,label";
  for (Index k = 0; k < model.plan.penultimate_units; ++k) os << ",f" << (k + 1);
  os << "\n";
  std::vector<Index> order(static_cast<size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;
  char buf[40];
  for (Index start = 0; start < n; start += 256) {
    Index bs = std::min<Index>(256, n - start);
    Batch b = make_batch(data, order, start, bs, AugmentPolicy{}, 0, 0);
    Tensor<S> images = b.images.template cast<S>();
    Tape<S> tape;
    auto fwd = model.forward(tape, images, false);
    const Tensor<S>& features = fwd.penultimate.value();
    if (features.rank() != 2 || features.dim(1) != model.plan.penultimate_units)
      throw ArchError("penultimate capture has unexpected shape " +
                      shape_to_string(features.shape()));
    for (Index r = 0; r < bs; ++r) {
      os << (start + r) << ',' << b.labels[static_cast<size_t>(r)];
      for (Index k = 0; k < features.dim(1); ++k) {
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(features(r, k)));
        os << ',' << buf;
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace pkkd
