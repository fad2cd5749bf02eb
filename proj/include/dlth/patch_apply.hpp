#pragma once

#include <cstdint>
#include <vector>

#include "dlth/image.hpp"
#include "dlth/patch_mask.hpp"

namespace dlth {

// Kept patches of one image, original-index order. Each patch is stored as
// patch_size^2 * channels bytes in (channel, row, column) order, the same
// order the patch embedding consumes.
struct PackedPatches {
  int patch_size = 0;
  int channels = 0;
  std::vector<int> index_map;  // packed position -> original grid index
  std::vector<std::uint8_t> data;

  int size() const { return static_cast<int>(index_map.size()); }
  std::size_t patch_bytes() const { return static_cast<std::size_t>(patch_size * patch_size * channels); }
};

// Per-patch auxiliary labels on the original grid (or packed after masking).
using TokenLabelSet = std::vector<int>;

PackedPatches remove_patches(const Image& image, const PatchMask& mask);

// Dropped patches become literal black in raw pixel space; kept pixels are
// untouched. Normalization happens afterwards.
Image occlude_patches(const Image& image, const PatchMask& mask, int patch_size);

TokenLabelSet mask_token_labels(const TokenLabelSet& labels, const PatchMask& mask);

// Column-mirrors a full-grid label set, matching a horizontally flipped image.
TokenLabelSet flip_token_labels(const TokenLabelSet& labels, int grid_side);

}  // namespace dlth
