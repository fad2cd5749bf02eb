#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlth/data.hpp"
#include "dlth/model/model.hpp"
#include "dlth/trainer.hpp"
#include "dlth/weight_mask.hpp"

namespace dlth {

// Zeroes the `count` smallest-magnitude in-scope weights, ranked globally
// across tensors; equal magnitudes go to the lower flat index (tensor order,
// then position).
WeightMask magnitude_prune_count(const ParamSet<float>& params, PruneScope scope, std::int64_t count);

// Prunes llround(target * trainable parameter count) weights from the scope,
// so the reported sparsity is over the whole model.
WeightMask magnitude_prune(const ModelState& pretrained, PruneScope scope, double target_sparsity);

// Same scope and pruned count as magnitude_prune, uniformly random positions.
WeightMask random_weight_mask(const ModelConfig& config, PruneScope scope, double target_sparsity, std::uint64_t seed);

// A fresh initialization independent of any pretraining run.
ModelState random_reinit(const ModelConfig& config, std::uint64_t seed);

struct RewindSpec {
  int epoch = 0;       // k; 0 is classic initialization
  std::string digest;  // checkpoint digest, checked when non-empty
};

// ceil(0.05 * T).
int default_rewind_epoch(int total_epochs);

// Loads <pretrain_run>/ckpt/epoch-k.
ModelState rewind_state(const std::string& pretrain_run_dir, const RewindSpec& rewind);

// Trains `init` on complete inputs with masked weights held at zero. Training
// resumes at init.epoch with a fresh optimizer, so LTH, RR and RM runs that
// start from the same epoch share schedule and data order. `resume` picks up
// the newest checkpoint in config.run_dir.
std::pair<ModelState, TrainHistory> train_masked(ModelState init, const WeightMask& mask, const DatasetHandle& data,
                                                 RunConfig config, const std::optional<RewindSpec>& rewind = {},
                                                 bool resume = false);

enum class InitKind { lth, rr, rm };
std::string to_string(InitKind k);

struct LthRun {
  InitKind kind = InitKind::lth;
  PruneScope scope = PruneScope::msa_mlp;
  double sparsity = 0.0;  // percent of all parameters
  double accuracy = 0.0;  // percent
  bool rewound = false;
  std::string pairing;    // runs sharing mask and hyperparameters share this key
};

struct LthRow {
  PruneScope scope = PruneScope::msa_mlp;
  double sparsity = 0.0;
  double lth = 0.0;
  double rr = 0.0;
  std::optional<double> rm;
  double diff = 0.0;  // lth - rr
  bool rewound = false;
};

// One row per LTH run, matched to exactly one RR run (and optionally one RM
// run) by pairing key. A missing or ambiguous partner is a report error.
std::vector<LthRow> lth_report(const std::vector<LthRun>& runs);
std::string render_lth_table(const std::vector<LthRow>& rows);
std::string lth_csv(const std::vector<LthRow>& rows);

// Fixed-point text at 0.1 precision, "-0.0" printed as "0.0".
std::string format_tenths(double value);

}  // namespace dlth
