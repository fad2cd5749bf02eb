#pragma once

#include <cstdint>
#include <vector>

#include "dlth/error.hpp"

namespace dlth {

// Raw 8-bit image, HWC layout.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h * w * c), 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Per-channel statistics applied to pixel/255.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Normalized batch, CHW per image, contiguous.
template <typename T>
struct ImageBatch {
  int count = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  std::size_t image_size() const { return static_cast<std::size_t>(channels * height * width); }
  T* image(int b) { return data.data() + static_cast<std::size_t>(b) * image_size(); }
  const T* image(int b) const { return data.data() + static_cast<std::size_t>(b) * image_size(); }

  void append(const Image& img, const NormStats& stats) {
    if (count == 0) {
      channels = img.channels;
      height = img.height;
      width = img.width;
    }
    require(img.channels == channels && img.height == height && img.width == width, ErrorKind::shape,
            "batch images must share one shape");
    const std::size_t base = data.size();
    data.resize(base + image_size());
    for (int c = 0; c < channels; ++c) {
      const double mean = stats.mean.empty() ? 0.0 : stats.mean[static_cast<std::size_t>(c)];
      const double sd = stats.stddev.empty() ? 1.0 : stats.stddev[static_cast<std::size_t>(c)];
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          data[base + static_cast<std::size_t>((c * height + y) * width + x)] =
              static_cast<T>((img.at(y, x, c) / 255.0 - mean) / sd);
    }
    ++count;
  }

  template <typename U>
  ImageBatch<U> cast() const {
    ImageBatch<U> out{count, channels, height, width, {}};
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

}  // namespace dlth
