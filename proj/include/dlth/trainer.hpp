#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlth/data.hpp"
#include "dlth/model/model.hpp"
#include "dlth/optim.hpp"
#include "dlth/patch_apply.hpp"
#include "dlth/selector.hpp"
#include "dlth/ticket_store.hpp"
#include "dlth/weight_mask.hpp"

namespace dlth {

enum class TrainPath { lt, rc, full };
// remove: dropped patches leave the token sequence (ViT only).
// occlude: dropped patches are blacked out and the input keeps its shape.
enum class InputMode { remove, occlude };

std::string to_string(TrainPath p);
TrainPath parse_path(const std::string& text);
std::string to_string(InputMode m);
InputMode parse_input_mode(const std::string& text);

struct RunConfig {
  TrainPath path = TrainPath::full;
  int epochs = 10;           // T
  int finetune_epochs = 0;   // F: reserved, no procedure consumes it
  int warmup_epochs = 0;     // Tw; 0 applies the target sparsity from the first epoch
  SelectorConfig selector;   // keep rate and stage count define the target sparsity
  std::uint64_t seed = 0;    // data order, augmentation draws, random masks
  bool rc_resample = false;  // draw fresh random masks every epoch instead of once per image
  InputMode input_mode = InputMode::remove;
  OptimConfig optim;
  bool augment = true;
  int checkpoint_every = 1;  // epochs; 0 disables checkpoints
  std::string run_dir;       // checkpoints and history; empty keeps everything in memory
  double token_label_weight = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

struct EpochRecord {
  int epoch = 0;  // epochs completed after this record
  double loss = 0.0;
  double train_accuracy = 0.0;
  double sparsity = 0.0;  // mean fraction of patches withheld this epoch
  std::int64_t tokens = 0;
  std::string digest;     // checkpoint digest, empty when none was written
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

// What one optimization step consumed; used to compare paths.
struct StepRecord {
  int epoch = 0;
  int step = 0;
  std::vector<int> indices;      // dataset indices
  std::vector<int> kept_counts;  // patches fed per image
};

struct TrainContext {
  const TicketStore* store = nullptr;     // LT masks
  std::string selector_fingerprint;       // the store must carry this
  const WeightMask* weight_mask = nullptr;
  const std::vector<TokenLabelSet>* token_labels = nullptr;  // full grid, per dataset index
  std::function<void(const StepRecord&)> observer;
  std::function<void(const EpochRecord&)> on_epoch;
  bool resume = false;  // continue from the newest checkpoint in run_dir
};

// s(t) = s_target * (1 - cos(pi * min(t, Tw) / Tw)) / 2.
double warmup_sparsity(double t, int warmup_epochs, double s_target);

// (1 - s)^(1 / stages), the per-stage keep rate giving sparsity s.
double effective_keep_rate(double sparsity, int stages);

// Patches kept per image at epoch t.
int epoch_keep_count(const RunConfig& config, int n_patches, int epoch);

std::pair<ModelState, TrainHistory> train(ModelState model, const DatasetHandle& data, const RunConfig& config,
                                          const TrainContext& context = {});

// Per-patch argmax of a teacher's token-level predictions on full images.
std::vector<TokenLabelSet> teacher_token_labels(const ModelState& teacher, const DatasetHandle& data);

}  // namespace dlth
