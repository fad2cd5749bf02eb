#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "dlth/image.hpp"
#include "dlth/model/config.hpp"
#include "dlth/rng.hpp"

namespace dlth::test {

inline ModelConfig tiny_vit(int depth = 4, int dim = 16, int heads = 2, int patch = 8) {
  ModelConfig c;
  c.depth = depth;
  c.embed_dim = dim;
  c.num_heads = heads;
  c.patch_size = patch;
  c.mlp_ratio = 2;
  return c;
}

inline Image noise_image(std::uint64_t seed, int size = 32, int channels = 3) {
  Rng rng(seed);
  Image img(size, size, channels);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

inline NormStats unit_stats() { return {{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}}; }

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dlth-" + tag + "-" + std::to_string(std::hash<std::string>{}(tag) ^ static_cast<std::size_t>(::getpid())));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace dlth::test
