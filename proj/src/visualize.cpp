#include "dlth/visualize.hpp"

#include <algorithm>

#include "dlth/data.hpp"

namespace dlth {

std::vector<Image> render_stages(const Image& image, const std::vector<std::vector<int>>& stage_kept, int patch_size,
                                 bool occlusion) {
  require(patch_size > 0 && image.height % patch_size == 0 && image.width % patch_size == 0, ErrorKind::shape,
          "image is not tiled by the patch size");
  const int gw = image.width / patch_size;
  const int n = gw * (image.height / patch_size);
  const std::uint8_t fill = occlusion ? 0 : 128;
  std::vector<Image> out;
  std::vector<int> previous;
  for (std::size_t s = 0; s < stage_kept.size(); ++s) {
    auto kept = stage_kept[s];
    std::sort(kept.begin(), kept.end());
    for (int k : kept) require(k >= 0 && k < n, ErrorKind::argument, "patch index out of range");
    if (s > 0)
      require(std::includes(previous.begin(), previous.end(), kept.begin(), kept.end()), ErrorKind::invariant_violation,
              "stage " + std::to_string(s + 1) + " keeps a patch stage " + std::to_string(s) + " dropped");
    Image img = image;
    for (int index = 0; index < n; ++index) {
      if (std::binary_search(kept.begin(), kept.end(), index)) continue;
      const int gy = index / gw, gx = index % gw;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int c = 0; c < image.channels; ++c) img.at(gy * patch_size + y, gx * patch_size + x, c) = fill;
    }
    out.push_back(std::move(img));
    previous = std::move(kept);
  }
  return out;
}

std::vector<std::filesystem::path> write_stages(const std::filesystem::path& prefix, const Image& image,
                                                const std::vector<Image>& stages) {
  std::vector<std::filesystem::path> paths;
  const auto input = prefix.string() + "-input.ppm";
  write_ppm(input, image);
  paths.emplace_back(input);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto path = prefix.string() + "-stage" + std::to_string(s + 1) + ".ppm";
    write_ppm(path, stages[s]);
    paths.emplace_back(path);
  }
  return paths;
}

Image upscale(const Image& image, int factor) {
  require(factor >= 1, ErrorKind::argument, "upscale factor must be positive");
  Image out(image.height * factor, image.width * factor, image.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y / factor, x / factor, c);
  return out;
}

}  // namespace dlth
