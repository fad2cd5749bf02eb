#include "dlth/patch_apply.hpp"

namespace dlth {

namespace {

int patch_side(const Image& image, const PatchMask& mask) {
  require(mask.grid_side > 0 && image.height == image.width, ErrorKind::shape, "square image and grid required");
  require(image.height % mask.grid_side == 0, ErrorKind::shape,
          "image side " + std::to_string(image.height) + " is not divisible by grid " +
              std::to_string(mask.grid_side));
  return image.height / mask.grid_side;
}

}  // namespace

PackedPatches remove_patches(const Image& image, const PatchMask& mask) {
  const int p = patch_side(image, mask);
  PackedPatches out;
  out.patch_size = p;
  out.channels = image.channels;
  out.index_map = mask.kept_indices();
  require(!out.index_map.empty(), ErrorKind::degenerate_input, "mask keeps zero patches");
  out.data.reserve(out.index_map.size() * out.patch_bytes());
  for (int index : out.index_map) {
    const int gy = index / mask.grid_side, gx = index % mask.grid_side;
    for (int c = 0; c < image.channels; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) out.data.push_back(image.at(gy * p + y, gx * p + x, c));
  }
  return out;
}

Image occlude_patches(const Image& image, const PatchMask& mask, int patch_size) {
  require(patch_size > 0 && image.height == mask.grid_side * patch_size && image.width == mask.grid_side * patch_size,
          ErrorKind::shape, "image is not tiled by the mask grid at patch size " + std::to_string(patch_size));
  Image out = image;
  for (int index = 0; index < mask.size(); ++index) {
    if (mask.keeps(index)) continue;
    const int gy = index / mask.grid_side, gx = index % mask.grid_side;
    for (int y = 0; y < patch_size; ++y)
      for (int x = 0; x < patch_size; ++x)
        for (int c = 0; c < image.channels; ++c) out.at(gy * patch_size + y, gx * patch_size + x, c) = 0;
  }
  return out;
}

TokenLabelSet mask_token_labels(const TokenLabelSet& labels, const PatchMask& mask) {
  require(static_cast<int>(labels.size()) == mask.size(), ErrorKind::alignment,
          "token labels (" + std::to_string(labels.size()) + ") do not cover the mask grid (" +
              std::to_string(mask.size()) + ")");
  TokenLabelSet out;
  for (int index = 0; index < mask.size(); ++index)
    if (mask.keeps(index)) out.push_back(labels[static_cast<std::size_t>(index)]);
  return out;
}

TokenLabelSet flip_token_labels(const TokenLabelSet& labels, int grid_side) {
  require(static_cast<int>(labels.size()) == grid_side * grid_side, ErrorKind::alignment,
          "token labels do not cover the grid");
  TokenLabelSet out(labels.size());
  for (int y = 0; y < grid_side; ++y)
    for (int x = 0; x < grid_side; ++x)
      out[static_cast<std::size_t>(y * grid_side + x)] = labels[static_cast<std::size_t>(y * grid_side + grid_side - 1 - x)];
  return out;
}

}  // namespace dlth
