#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlth/image.hpp"
#include "dlth/model/model.hpp"
#include "dlth/patch_mask.hpp"

namespace dlth {

enum class HeadAggregation { mean };
enum class TieRule { lowest_original_index };
enum class Rounding { half_up };

struct SelectorConfig {
  std::vector<int> stage_depths{4, 7, 10};  // 1-based layer indices
  double keep_rate = 0.8;
  HeadAggregation head_agg = HeadAggregation::mean;
  TieRule tie_rule = TieRule::lowest_original_index;
  Rounding rounding = Rounding::half_up;

  int stages() const { return static_cast<int>(stage_depths.size()); }
  // Throws a configuration error unless depths are strictly increasing within
  // [1, model_depth] and 0 < keep_rate <= 1.
  void validate(int model_depth) const;

  friend bool operator==(const SelectorConfig&, const SelectorConfig&) = default;
};

void to_json(nlohmann::json& j, const SelectorConfig& c);
void from_json(const nlohmann::json& j, SelectorConfig& c);

// [4, 7, 10] for 12-layer encoders, proportionally rescaled for other depths
// (8 layers -> [3, 5, 7]).
std::vector<int> default_stage_depths(int model_depth);

// Importance of the alive tokens at one stage, keyed by original patch index.
// Dropped tokens are absent.
struct ImportanceScores {
  int stage = 0;
  std::vector<int> indices;
  std::vector<double> scores;
};

// Mean over heads of the CLS query row. `alive[j]` is the original index of
// token row j + 1 in `layer`.
template <typename T>
ImportanceScores score_tokens(const AttentionLayer<T>& layer, std::span<const int> alive, int stage = 0);

// Top-k by score, ties to the lowest original index. Result ascending.
std::vector<int> topk_select(const ImportanceScores& scores, int k);

// k_i = round_half_up(rho * k_{i-1}), k_0 = n_patches.
std::vector<int> stage_keep_counts(int n_patches, const SelectorConfig& config);
std::vector<int> stage_keep_counts(int n_patches, double keep_rate, int stages);

// 1 - rho^stages.
double target_sparsity(const SelectorConfig& config);

struct Selection {
  PatchMask mask;
  std::vector<std::vector<int>> stage_kept;  // ascending original indices per stage
  std::vector<ImportanceScores> scores;      // per stage
  // Every patch once: final survivors by final score, then the last stage's
  // victims by their score, and so on back to the first stage. A prefix of
  // length k is the natural k-patch ticket (used by sparsity warmup).
  std::vector<int> ranking;
};

// Frozen ViT plus selection modules. Runs in double precision.
class TicketSelector {
 public:
  TicketSelector(const ModelState& model, SelectorConfig config, NormStats stats);

  const SelectorConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_config_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const NormStats& stats() const { return stats_; }

  Selection select(const Image& image) const;
  std::vector<Selection> select(std::span<const Image> images) const;

 private:
  ModelConfig model_config_;
  ParamSet<double> params_;
  SelectorConfig config_;
  NormStats stats_;
  std::string fingerprint_;
};

PatchMask select_tickets(const TicketSelector& selector, const Image& image);

// Uniform kept set of exactly kept_count, the first kept_count entries of a
// seeded permutation (so smaller counts under one seed are nested).
PatchMask random_mask(int n_patches, int kept_count, std::uint64_t seed);
std::vector<int> random_ranking(int n_patches, std::uint64_t seed);

}  // namespace dlth
