#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "dlth/data.hpp"
#include "dlth/digest.hpp"
#include "dlth/selector.hpp"
#include "dlth/visualize.hpp"
#include "support.hpp"

using namespace dlth;

namespace {

int flat_patches(const Image& img, int patch, std::uint8_t value) {
  const int side = img.height / patch;
  int count = 0;
  for (int g = 0; g < side * side; ++g) {
    bool flat = true;
    for (int y = 0; y < patch && flat; ++y)
      for (int x = 0; x < patch && flat; ++x)
        for (int c = 0; c < img.channels; ++c)
          if (img.at((g / side) * patch + y, (g % side) * patch + x, c) != value) flat = false;
    count += flat;
  }
  return count;
}

std::vector<std::vector<int>> nested_stages(int n, const std::vector<int>& counts, std::uint64_t seed) {
  const auto ranking = random_ranking(n, seed);
  std::vector<std::vector<int>> stages;
  for (int k : counts) {
    std::vector<int> s(ranking.begin(), ranking.begin() + k);
    std::sort(s.begin(), s.end());
    stages.push_back(s);
  }
  return stages;
}

Image solid(int size, std::uint8_t v) {
  Image img(size, size, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

}  // namespace

TEST_CASE("stage renders gray out exactly the dropped patches") {
  const auto counts = stage_keep_counts(196, 0.8, 3);
  REQUIRE(counts == std::vector<int>{157, 126, 101});
  const auto img = solid(224, 7);
  const auto out = render_stages(img, nested_stages(196, counts, 3), 16);
  REQUIRE(out.size() == 3);
  CHECK(flat_patches(out[0], 16, 128) == 39);
  CHECK(flat_patches(out[1], 16, 128) == 70);
  CHECK(flat_patches(out[2], 16, 128) == 95);
  CHECK(flat_patches(out[2], 16, 7) == 101);

  const auto black = render_stages(img, nested_stages(196, counts, 3), 16, true);
  CHECK(flat_patches(black[2], 16, 0) == 95);
}

TEST_CASE("later stages only add gray patches") {
  const auto img = test::noise_image(4, 32);
  const auto out = render_stages(img, nested_stages(64, {50, 40, 32}, 9), 4);
  for (std::size_t s = 1; s < out.size(); ++s)
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      if (out[s].pixels[i] != out[s - 1].pixels[i]) CHECK(out[s].pixels[i] == 128);
}

TEST_CASE("keep rate one leaves every stage equal to the input") {
  const auto img = test::noise_image(5, 32);
  auto model = build_model(test::tiny_vit(), 1);
  SelectorConfig sc;
  sc.stage_depths = {1, 2, 3};
  sc.keep_rate = 1.0;
  TicketSelector selector(model, sc, test::unit_stats());
  const auto sel = selector.select(img);
  for (const auto& s : render_stages(img, sel.stage_kept, 8)) CHECK(s == img);
}

TEST_CASE("non-nested stages are rejected") {
  const auto img = test::noise_image(6, 32);
  try {
    render_stages(img, {{0, 1, 2}, {1, 3}}, 8);
    FAIL("accepted non-nested stages");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invariant_violation);
  }
}

TEST_CASE("rendering is byte-reproducible") {
  test::TempDir dir("vis");
  const auto img = test::noise_image(8, 32);
  const auto stages = render_stages(img, nested_stages(16, {13, 10, 8}, 2), 8);
  const auto a = write_stages(dir.path / "a", upscale(img, 3), stages);
  const auto b = write_stages(dir.path / "b", upscale(img, 3), stages);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(sha256_file(a[i]) == sha256_file(b[i]));
  const auto back = read_pnm(a[1]);
  CHECK(back == stages[0]);
  CHECK(upscale(img, 3).height == 96);
}
