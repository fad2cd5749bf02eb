#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>

#include "dlth/selector.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace dlth;
using Catch::Approx;

TEST_CASE("keep counts follow the half-up rounding chain") {
  CHECK(stage_keep_counts(196, 0.8, 3) == std::vector<int>{157, 126, 101});
  CHECK(stage_keep_counts(196, 0.9, 3) == std::vector<int>{176, 158, 142});
  CHECK(stage_keep_counts(196, 1.0, 3) == std::vector<int>{196, 196, 196});
  // 2.5 rounds up, which plain floating error could otherwise miss
  CHECK(stage_keep_counts(5, 0.5, 1) == std::vector<int>{3});
  CHECK_THROWS_AS(stage_keep_counts(2, 0.1, 2), Error);
}

TEST_CASE("keep count chains against direct recurrence") {
  for (int n : {16, 64, 196}) {
    for (double rho : {0.5, 0.7, 0.85, 0.95}) {
      auto counts = stage_keep_counts(n, rho, 3);
      int k = n;
      for (int i = 0; i < 3; ++i) {
        // integer form of floor(rho*k + 1/2) using exact decimal rho
        const long num = std::lround(rho * 100) * k + 50;
        k = static_cast<int>(num / 100);
        CHECK(counts[static_cast<std::size_t>(i)] == k);
      }
    }
  }
}

TEST_CASE("target sparsity reproduces the published patch sparsities") {
  const std::vector<std::pair<double, double>> table{{0.95, 14.3}, {0.9, 27.1}, {0.85, 38.6}, {0.8, 48.8}};
  for (auto [rho, pct] : table) {
    SelectorConfig c;
    c.keep_rate = rho;
    CHECK(100.0 * target_sparsity(c) == Approx(pct).margin(0.05));
  }
}

TEST_CASE("default stage depths") {
  CHECK(default_stage_depths(12) == std::vector<int>{4, 7, 10});
  CHECK(default_stage_depths(8) == std::vector<int>{3, 5, 7});
  CHECK(default_stage_depths(4) == std::vector<int>{1, 2, 3});
  for (int depth = 3; depth <= 16; ++depth) {
    auto d = default_stage_depths(depth);
    CHECK(std::is_sorted(d.begin(), d.end()));
    CHECK(std::set<int>(d.begin(), d.end()).size() == d.size());
    CHECK(d.front() >= 1);
    CHECK(d.back() <= depth);
  }
}

TEST_CASE("selector config validation") {
  SelectorConfig c;
  CHECK_NOTHROW(c.validate(12));
  CHECK_THROWS_AS(c.validate(8), Error);
  c.stage_depths = {3, 3};
  CHECK_THROWS_AS(c.validate(8), Error);
  c.stage_depths = {2, 4};
  c.keep_rate = 0.0;
  CHECK_THROWS_AS(c.validate(8), Error);
  c.keep_rate = 1.2;
  CHECK_THROWS_AS(c.validate(8), Error);
}

TEST_CASE("top-k breaks ties toward the lower original index") {
  ImportanceScores s;
  s.indices = {9, 3, 7, 1, 5};
  s.scores = {0.2, 0.5, 0.2, 0.1, 0.2};
  CHECK(topk_select(s, 1) == std::vector<int>{3});
  CHECK(topk_select(s, 2) == std::vector<int>{3, 5});
  CHECK(topk_select(s, 3) == std::vector<int>{3, 5, 7});
  CHECK(topk_select(s, 5) == std::vector<int>{1, 3, 5, 7, 9});
  CHECK_THROWS_AS(topk_select(s, 6), Error);
  CHECK_THROWS_AS(topk_select(s, 0), Error);
}

TEST_CASE("CLS scores average heads and skip the CLS column") {
  AttentionLayer<double> layer;
  layer.heads = 2;
  layer.tokens = 3;
  // head 0 then head 1, row-major 3x3
  layer.probs = {0.2, 0.5, 0.3, 0, 0, 0, 0, 0, 0,  //
                 0.4, 0.1, 0.5, 0, 0, 0, 0, 0, 0};
  const std::vector<int> alive{4, 11};
  auto s = score_tokens(layer, alive, 1);
  CHECK(s.indices == alive);
  CHECK(s.scores[0] == Approx(0.3));
  CHECK(s.scores[1] == Approx(0.4));
  const std::vector<int> wrong{4};
  CHECK_THROWS_AS(score_tokens(layer, wrong, 1), Error);
}

TEST_CASE("selection matches the brute-force oracle") {
  const std::vector<ModelConfig> configs{test::tiny_vit(4, 16, 2, 8), test::tiny_vit(3, 12, 3, 4),
                                         test::tiny_vit(2, 8, 2, 8)};
  int compared = 0;
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      auto model = build_model(configs[ci], 100 * ci + seed);
      SelectorConfig sc;
      sc.stage_depths = default_stage_depths(configs[ci].depth);
      sc.keep_rate = 0.5 + 0.05 * static_cast<double>(seed % 9);
      TicketSelector selector(model, sc, test::unit_stats());
      const auto img = test::noise_image(7000 + seed + 31 * ci);
      const auto got = selector.select(img);
      const auto want = oracle::select(model, img, test::unit_stats(), sc.stage_depths, sc.keep_rate);
      CHECK(got.mask.bits == want.mask);
      CHECK(got.stage_kept == want.stage_kept);
      ++compared;
    }
  }
  CHECK(compared == 36);
}

TEST_CASE("selection properties") {
  auto model = build_model(test::tiny_vit(), 5);
  SelectorConfig sc;
  sc.stage_depths = {1, 2, 3};
  sc.keep_rate = 0.75;
  TicketSelector selector(model, sc, test::unit_stats());
  const int n = model.config.num_patches();
  const auto counts = stage_keep_counts(n, sc);

  std::vector<Image> images;
  for (std::uint64_t s = 0; s < 6; ++s) images.push_back(test::noise_image(s));
  const auto batched = selector.select(images);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto single = selector.select(images[i]);
    INFO("image " << i);
    CHECK(single.mask == batched[i].mask);  // batching never changes a ticket
    CHECK(single.mask.kept_count() == counts.back());
    for (std::size_t st = 0; st < single.stage_kept.size(); ++st) {
      CHECK(static_cast<int>(single.stage_kept[st].size()) == counts[st]);
      if (st > 0)
        CHECK(std::includes(single.stage_kept[st - 1].begin(), single.stage_kept[st - 1].end(),
                            single.stage_kept[st].begin(), single.stage_kept[st].end()));
    }
    // ranking: a permutation whose prefix is the ticket
    auto sorted = single.ranking;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> iota(static_cast<std::size_t>(n));
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    std::vector<int> prefix(single.ranking.begin(), single.ranking.begin() + counts.back());
    std::sort(prefix.begin(), prefix.end());
    CHECK(prefix == single.mask.kept_indices());
    for (std::size_t st = 0; st < counts.size(); ++st) {
      std::vector<int> p(single.ranking.begin(), single.ranking.begin() + counts[st]);
      std::sort(p.begin(), p.end());
      CHECK(p == single.stage_kept[st]);
    }
  }

  SECTION("keep rate 1 keeps everything") {
    sc.keep_rate = 1.0;
    TicketSelector all(model, sc, test::unit_stats());
    CHECK(all.select(images[0]).mask.kept_count() == n);
  }
}

TEST_CASE("selector rejects mismatched inputs") {
  auto model = build_model(test::tiny_vit(), 5);
  SelectorConfig sc;
  sc.stage_depths = {1, 2, 3};
  TicketSelector selector(model, sc, test::unit_stats());
  CHECK_THROWS_AS(selector.select(test::noise_image(1, 16)), Error);
  sc.stage_depths = {2, 9};
  CHECK_THROWS_AS(TicketSelector(model, sc, test::unit_stats()), Error);
  auto cnn = build_model(preset("cnn-desk"), 1);
  sc.stage_depths = {1};
  CHECK_THROWS_AS(TicketSelector(cnn, sc, test::unit_stats()), Error);
}

TEST_CASE("random masks are exact-size, seeded and nested") {
  const int n = 64;
  auto a = random_mask(n, 33, 9);
  CHECK(a.kept_count() == 33);
  CHECK(a.provenance == MaskProvenance::random);
  CHECK(a.target_sparsity == Approx(1.0 - 33.0 / 64.0));
  CHECK(random_mask(n, 33, 9) == a);
  CHECK_FALSE(random_mask(n, 33, 10) == a);
  auto small = random_mask(n, 20, 9);
  CHECK((small & a) == small);
  // uniformity: every patch is kept about half the time at k = n/2
  std::vector<int> hits(static_cast<std::size_t>(n), 0);
  for (std::uint64_t s = 0; s < 4000; ++s)
    for (int i : random_mask(n, 32, s).kept_indices()) ++hits[static_cast<std::size_t>(i)];
  for (int h : hits) CHECK(std::abs(h - 2000) < 200);
}
