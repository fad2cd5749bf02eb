#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dlth {

enum class ArchKind { vit, cnn };

std::string to_string(ArchKind kind);
ArchKind parse_arch_kind(const std::string& text);

// Architecture hyperparameters. For the CNN, `depth` counts weighted layers
// (6n+2, ResNet-CIFAR style), `embed_dim` is the first-stage width and
// `patch_size` only defines the occlusion grid.
struct ModelConfig {
  ArchKind arch = ArchKind::vit;
  int depth = 8;
  int embed_dim = 192;
  int num_heads = 3;
  int patch_size = 4;
  int image_size = 32;
  int num_classes = 10;
  int mlp_ratio = 4;
  int in_channels = 3;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int head_dim() const { return embed_dim / num_heads; }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  int cnn_blocks_per_stage() const { return (depth - 2) / 6; }

  // Throws a configuration error naming the first violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Named presets: "tiny-desk", "vit-micro", "deit-tiny-like", "deit-small-like",
// "deit-medium-like", "cnn-desk".
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace dlth
