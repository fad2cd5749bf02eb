#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "dlth/model/model.hpp"

namespace dlth {

struct GradCheckOptions {
  int samples_per_tensor = 6;
  double step = 1e-5;
  double magnitude_floor = 1e-5;  // denominators never drop below this
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
};

// Compares analytic gradients of the mean cross-entropy against central
// finite differences at a random sample of coordinates per parameter tensor,
// all in double precision. Only tiny models are accepted (ViT: depth <= 2,
// embed_dim <= 16; CNN: depth 8, width <= 8).
GradCheckReport finite_diff_check(const ModelState& model, const ImageBatch<double>& batch, std::span<const int> labels,
                                  const KeptIndices& kept = {}, const GradCheckOptions& options = {});

}  // namespace dlth
