#include "dlth/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlth/rng.hpp"

namespace dlth {

void SelectorConfig::validate(int model_depth) const {
  require(!stage_depths.empty(), ErrorKind::configuration, "selector needs at least one stage");
  for (std::size_t i = 0; i < stage_depths.size(); ++i) {
    require(stage_depths[i] >= 1 && stage_depths[i] <= model_depth, ErrorKind::configuration,
            "stage depth " + std::to_string(stage_depths[i]) + " outside model depth " + std::to_string(model_depth));
    require(i == 0 || stage_depths[i] > stage_depths[i - 1], ErrorKind::configuration,
            "stage depths must be strictly increasing");
  }
  require(keep_rate > 0.0 && keep_rate <= 1.0, ErrorKind::configuration, "keep rate must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const SelectorConfig& c) {
  j = nlohmann::json{{"stage_depths", c.stage_depths},
                     {"keep_rate", c.keep_rate},
                     {"head_agg", "mean"},
                     {"tie_rule", "lowest-original-index-first"},
                     {"rounding", "half-up"}};
}

void from_json(const nlohmann::json& j, SelectorConfig& c) {
  j.at("stage_depths").get_to(c.stage_depths);
  j.at("keep_rate").get_to(c.keep_rate);
  require(j.value("head_agg", "mean") == "mean", ErrorKind::configuration, "unsupported head aggregation");
  require(j.value("tie_rule", "lowest-original-index-first") == "lowest-original-index-first",
          ErrorKind::configuration, "unsupported tie rule");
  require(j.value("rounding", "half-up") == "half-up", ErrorKind::configuration, "unsupported rounding");
}

std::vector<int> default_stage_depths(int model_depth) {
  if (model_depth >= 10) return {4, 7, 10};
  std::vector<int> depths;
  for (int base : {4, 7, 10}) {
    int d = static_cast<int>(std::lround(base * model_depth / 12.0));
    d = std::clamp(d, 1, model_depth);
    if (depths.empty() || d > depths.back()) depths.push_back(d);
  }
  return depths;
}

template <typename T>
ImportanceScores score_tokens(const AttentionLayer<T>& layer, std::span<const int> alive, int stage) {
  require(layer.heads >= 1 && layer.tokens == static_cast<int>(alive.size()) + 1, ErrorKind::selector,
          "attention layer has no CLS row for " + std::to_string(alive.size()) + " alive tokens");
  ImportanceScores out;
  out.stage = stage;
  out.indices.assign(alive.begin(), alive.end());
  out.scores.assign(alive.size(), 0.0);
  for (int h = 0; h < layer.heads; ++h)
    for (std::size_t j = 0; j < alive.size(); ++j) out.scores[j] += static_cast<double>(layer.at(h, 0, static_cast<int>(j) + 1));
  for (auto& s : out.scores) s /= layer.heads;
  return out;
}

template ImportanceScores score_tokens(const AttentionLayer<float>&, std::span<const int>, int);
template ImportanceScores score_tokens(const AttentionLayer<double>&, std::span<const int>, int);

namespace {

// Positions into `scores`, best first.
std::vector<std::size_t> rank_positions(const ImportanceScores& scores) {
  std::vector<std::size_t> order(scores.indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
    return scores.indices[a] < scores.indices[b];
  });
  return order;
}

}  // namespace

std::vector<int> topk_select(const ImportanceScores& scores, int k) {
  require(k >= 1 && k <= static_cast<int>(scores.indices.size()), ErrorKind::argument,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.indices.size()) + "]");
  const auto order = rank_positions(scores);
  std::vector<int> kept;
  kept.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) kept.push_back(scores.indices[order[static_cast<std::size_t>(i)]]);
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<int> stage_keep_counts(int n_patches, double keep_rate, int stages) {
  require(n_patches >= 1, ErrorKind::argument, "patch count must be positive");
  std::vector<int> counts;
  int k = n_patches;
  for (int i = 0; i < stages; ++i) {
    // The epsilon keeps exact halves such as 0.5 * 5 rounding up despite
    // binary representation error in keep_rate.
    k = static_cast<int>(std::floor(keep_rate * k + 0.5 + 1e-9));
    counts.push_back(k);
  }
  require(counts.empty() || counts.back() >= 1, ErrorKind::degenerate_input,
          "keep rate " + std::to_string(keep_rate) + " leaves no patch of " + std::to_string(n_patches));
  return counts;
}

std::vector<int> stage_keep_counts(int n_patches, const SelectorConfig& config) {
  return stage_keep_counts(n_patches, config.keep_rate, config.stages());
}

double target_sparsity(const SelectorConfig& config) { return 1.0 - std::pow(config.keep_rate, config.stages()); }

TicketSelector::TicketSelector(const ModelState& model, SelectorConfig config, NormStats stats)
    : model_config_(model.config), config_(std::move(config)), stats_(std::move(stats)) {
  require(model.config.arch == ArchKind::vit, ErrorKind::configuration, "the ticket selector needs a ViT");
  config_.validate(model.config.depth);
  params_ = model.params.cast<double>();
  fingerprint_ = model.digest();
}

std::vector<Selection> TicketSelector::select(std::span<const Image> images) const {
  const int n = model_config_.num_patches();
  const auto counts = stage_keep_counts(n, config_);
  ImageBatch<double> batch;
  for (const auto& img : images) {
    require(img.height == model_config_.image_size && img.width == model_config_.image_size &&
                img.channels == model_config_.in_channels,
            ErrorKind::configuration, "image does not match the selector input size");
    batch.append(img, stats_);
  }
  const int count = batch.count;
  std::vector<Selection> out(static_cast<std::size_t>(count));
  if (count == 0) return out;

  Mat<double> tokens;
  std::vector<int> offsets;
  vit_embed(model_config_, params_, batch, {}, tokens, offsets, static_cast<VitTape<double>*>(nullptr));
  std::vector<std::vector<int>> alive(static_cast<std::size_t>(count), std::vector<int>(static_cast<std::size_t>(n)));
  for (auto& a : alive) std::iota(a.begin(), a.end(), 0);
  std::vector<std::vector<std::vector<int>>> victims(static_cast<std::size_t>(count));

  std::size_t stage = 0;
  std::vector<AttentionLayer<double>> attention;
  for (int layer = 0; stage < counts.size(); ++layer) {
    const bool selecting = layer + 1 == config_.stage_depths[stage];
    vit_block(model_config_, params_, layer, tokens, offsets, static_cast<BlockTape<double>*>(nullptr), selecting ? &attention : nullptr);
    if (!selecting) continue;

    const int k = counts[stage];
    Mat<double> next(count * (k + 1), model_config_.embed_dim);
    std::vector<int> next_offsets(static_cast<std::size_t>(count) + 1, 0);
    for (int b = 0; b < count; ++b) {
      auto& sel = out[static_cast<std::size_t>(b)];
      auto& alive_b = alive[static_cast<std::size_t>(b)];
      auto scores = score_tokens(attention[static_cast<std::size_t>(b)], alive_b, static_cast<int>(stage));
      auto kept = topk_select(scores, k);

      // Victims of this stage, best first.
      std::vector<int> lost;
      for (auto pos : rank_positions(scores)) {
        const int idx = scores.indices[pos];
        if (!std::binary_search(kept.begin(), kept.end(), idx)) lost.push_back(idx);
      }
      victims[static_cast<std::size_t>(b)].push_back(std::move(lost));

      const int src = offsets[static_cast<std::size_t>(b)];
      const int dst = b * (k + 1);
      next.row(dst) = tokens.row(src);
      std::size_t j = 0;
      for (int r = 0; r < static_cast<int>(kept.size()); ++r) {
        while (alive_b[j] != kept[static_cast<std::size_t>(r)]) ++j;
        next.row(dst + 1 + r) = tokens.row(src + 1 + static_cast<int>(j));
      }
      next_offsets[static_cast<std::size_t>(b) + 1] = dst + k + 1;

      alive_b = kept;
      sel.stage_kept.push_back(std::move(kept));
      sel.scores.push_back(std::move(scores));
    }
    tokens = std::move(next);
    offsets = std::move(next_offsets);
    ++stage;
  }

  for (int b = 0; b < count; ++b) {
    auto& sel = out[static_cast<std::size_t>(b)];
    sel.mask = PatchMask::from_indices(model_config_.grid_side(), sel.stage_kept.back());
    sel.mask.provenance = MaskProvenance::ticket;
    sel.mask.target_sparsity = target_sparsity(config_);
    const auto& last = sel.scores.back();
    for (auto pos : rank_positions(last)) {
      const int idx = last.indices[pos];
      if (std::binary_search(sel.stage_kept.back().begin(), sel.stage_kept.back().end(), idx))
        sel.ranking.push_back(idx);
    }
    auto& v = victims[static_cast<std::size_t>(b)];
    for (auto it = v.rbegin(); it != v.rend(); ++it) sel.ranking.insert(sel.ranking.end(), it->begin(), it->end());
  }
  return out;
}

Selection TicketSelector::select(const Image& image) const { return std::move(select(std::span(&image, 1)).front()); }

PatchMask select_tickets(const TicketSelector& selector, const Image& image) { return selector.select(image).mask; }

std::vector<int> random_ranking(int n_patches, std::uint64_t seed) {
  require(n_patches >= 1, ErrorKind::argument, "patch count must be positive");
  Rng rng(seed);
  return rng.permutation(n_patches);
}

PatchMask random_mask(int n_patches, int kept_count, std::uint64_t seed) {
  require(kept_count >= 1 && kept_count <= n_patches, ErrorKind::argument,
          "kept count " + std::to_string(kept_count) + " outside [1, " + std::to_string(n_patches) + "]");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_patches))));
  require(side * side == n_patches, ErrorKind::argument, "patch count must be a square grid");
  auto order = random_ranking(n_patches, seed);
  order.resize(static_cast<std::size_t>(kept_count));
  auto mask = PatchMask::from_indices(side, order);
  mask.provenance = MaskProvenance::random;
  mask.seed = seed;
  mask.target_sparsity = 1.0 - static_cast<double>(kept_count) / n_patches;
  return mask;
}

}  // namespace dlth
