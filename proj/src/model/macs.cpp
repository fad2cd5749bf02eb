#include "dlth/model/macs.hpp"

#include <string>

#include "dlth/error.hpp"

namespace dlth {

std::uint64_t count_macs(const ModelConfig& config, int n_tokens) {
  require(n_tokens >= 1 && n_tokens <= config.num_patches() + 1, ErrorKind::argument,
          "n_tokens must be in [1, " + std::to_string(config.num_patches() + 1) + "]");
  using u64 = std::uint64_t;
  if (config.arch == ArchKind::vit) {
    const u64 n = static_cast<u64>(n_tokens);
    const u64 d = static_cast<u64>(config.embed_dim);
    const u64 r = static_cast<u64>(config.mlp_ratio);
    const u64 patches = n - 1;
    u64 total = patches * static_cast<u64>(config.patch_dim()) * d;
    const u64 per_layer = 4 * n * d * d + 2 * n * n * d + 2 * r * n * d * d;
    total += static_cast<u64>(config.depth) * per_layer;
    total += d * static_cast<u64>(config.num_classes);
    return total;
  }

  const u64 w = static_cast<u64>(config.embed_dim);
  u64 hw = static_cast<u64>(config.image_size) * static_cast<u64>(config.image_size);
  u64 total = hw * 9 * static_cast<u64>(config.in_channels) * w;
  u64 in = w;
  for (int s = 0; s < 3; ++s) {
    const u64 out = w << s;
    for (int i = 0; i < config.cnn_blocks_per_stage(); ++i) {
      if (s > 0 && i == 0) hw /= 4;
      total += hw * 9 * in * out;   // conv1 (at output resolution)
      total += hw * 9 * out * out;  // conv2
      if (in != out) total += hw * in * out;
      in = out;
    }
  }
  total += in * static_cast<u64>(config.num_classes);
  return total;
}

}  // namespace dlth
