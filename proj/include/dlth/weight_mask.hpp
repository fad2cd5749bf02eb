#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dlth/tensor.hpp"

namespace dlth {

enum class PruneScope { msa, msa_mlp, conv_all };

std::string to_string(PruneScope scope);
PruneScope parse_scope(const std::string& text);

// Whether a parameter tensor can be pruned under `scope`. Biases, norms,
// embeddings and classifier heads never are.
bool in_scope(PruneScope scope, const std::string& param_name);

// Per-tensor binary masks (1 = keep). Tensors without an entry are
// implicitly all-ones.
struct WeightMask {
  PruneScope scope = PruneScope::msa_mlp;
  std::map<std::string, std::vector<std::uint8_t>> masks;
  std::int64_t pruned = 0;
  std::int64_t total_params = 0;

  double achieved_sparsity() const {
    return total_params == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total_params);
  }

  // Zeroes masked entries of `params` in place.
  template <typename T>
  void apply(ParamSet<T>& params) const {
    for (const auto& [name, bits] : masks) {
      auto& t = params.at(name);
      require(t.numel() == bits.size(), ErrorKind::alignment, "mask size mismatch for " + name);
      for (std::size_t i = 0; i < bits.size(); ++i)
        if (!bits[i]) t.data[i] = T{0};
    }
  }

  // Checks that every masked tensor exists in `params` with matching size.
  template <typename T>
  void check_alignment(const ParamSet<T>& params) const {
    for (const auto& [name, bits] : masks) {
      require(params.contains(name), ErrorKind::alignment, "mask names unknown parameter " + name);
      require(params.at(name).numel() == bits.size(), ErrorKind::alignment, "mask size mismatch for " + name);
    }
  }

  std::string digest() const;
};

}  // namespace dlth
