#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlth/image.hpp"

namespace dlth {

// One image per stage: kept patches keep their pixels, dropped patches are
// flat gray (black with `occlusion`, matching what the model saw). Stage sets
// must be nested.
std::vector<Image> render_stages(const Image& image, const std::vector<std::vector<int>>& stage_kept, int patch_size,
                                 bool occlusion = false);

// Writes `<prefix>-stage<i>.ppm` (i from 1) plus `<prefix>-input.ppm`; returns the paths.
std::vector<std::filesystem::path> write_stages(const std::filesystem::path& prefix, const Image& image,
                                                const std::vector<Image>& stages);

// Nearest-neighbour upscaling for legible figures.
Image upscale(const Image& image, int factor);

}  // namespace dlth
