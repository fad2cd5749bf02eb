#include "dlth/weight_lth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dlth/model/checkpoint.hpp"
#include "dlth/rng.hpp"

namespace dlth {

namespace {

struct Slot {
  std::size_t tensor;
  std::size_t offset;
};

std::vector<Slot> scope_slots(const ParamSet<float>& params, PruneScope scope) {
  std::vector<Slot> slots;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params.trainable(t) || !in_scope(scope, params.name(t))) continue;
    for (std::size_t i = 0; i < params[t].numel(); ++i) slots.push_back({t, i});
  }
  return slots;
}

WeightMask mask_from_slots(const ParamSet<float>& params, PruneScope scope, const std::vector<Slot>& slots,
                           std::span<const std::size_t> pruned) {
  WeightMask mask;
  mask.scope = scope;
  mask.total_params = static_cast<std::int64_t>(params.trainable_count());
  for (std::size_t t = 0; t < params.size(); ++t)
    if (params.trainable(t) && in_scope(scope, params.name(t)))
      mask.masks[params.name(t)].assign(params[t].numel(), 1);
  for (auto p : pruned) mask.masks[params.name(slots[p].tensor)][slots[p].offset] = 0;
  mask.pruned = static_cast<std::int64_t>(pruned.size());
  return mask;
}

std::int64_t pruned_target(const ParamSet<float>& params, PruneScope scope, double target_sparsity) {
  require(target_sparsity >= 0.0 && target_sparsity < 1.0, ErrorKind::argument, "target sparsity must lie in [0, 1)");
  const auto total = static_cast<double>(params.trainable_count());
  const auto count = static_cast<std::int64_t>(std::llround(target_sparsity * total));
  const auto available = static_cast<std::int64_t>(scope_slots(params, scope).size());
  require(count <= available, ErrorKind::infeasible_sparsity,
          "scope " + to_string(scope) + " holds " + std::to_string(available) + " weights, " + std::to_string(count) +
              " needed for sparsity " + std::to_string(target_sparsity));
  return count;
}

}  // namespace

WeightMask magnitude_prune_count(const ParamSet<float>& params, PruneScope scope, std::int64_t count) {
  const auto slots = scope_slots(params, scope);
  require(count >= 0 && count <= static_cast<std::int64_t>(slots.size()), ErrorKind::infeasible_sparsity,
          "cannot prune " + std::to_string(count) + " of " + std::to_string(slots.size()) + " in-scope weights");
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto mag = [&](std::size_t i) { return std::abs(params[slots[i].tensor].data[slots[i].offset]); };
  // Slots are already in (tensor, offset) order, so the position is the tie key.
  std::partial_sort(order.begin(), order.begin() + count, order.end(), [&](std::size_t a, std::size_t b) {
    const float ma = mag(a), mb = mag(b);
    return ma != mb ? ma < mb : a < b;
  });
  return mask_from_slots(params, scope, slots, std::span(order.data(), static_cast<std::size_t>(count)));
}

WeightMask magnitude_prune(const ModelState& pretrained, PruneScope scope, double target_sparsity) {
  return magnitude_prune_count(pretrained.params, scope, pruned_target(pretrained.params, scope, target_sparsity));
}

WeightMask random_weight_mask(const ModelConfig& config, PruneScope scope, double target_sparsity, std::uint64_t seed) {
  const auto params = declare_params<float>(config);
  const auto count = pruned_target(params, scope, target_sparsity);
  const auto slots = scope_slots(params, scope);
  Rng rng(seed);
  auto perm = rng.permutation(static_cast<int>(slots.size()));
  std::vector<std::size_t> chosen(perm.begin(), perm.begin() + count);
  return mask_from_slots(params, scope, slots, chosen);
}

ModelState random_reinit(const ModelConfig& config, std::uint64_t seed) {
  return build_model(config, combine_seed(seed, 0x7272ULL));
}

int default_rewind_epoch(int total_epochs) {
  return static_cast<int>(std::ceil(0.05 * total_epochs - 1e-12));
}

ModelState rewind_state(const std::string& pretrain_run_dir, const RewindSpec& rewind) {
  auto ckpt = load_checkpoint(checkpoint_path(pretrain_run_dir, rewind.epoch));
  if (!rewind.digest.empty())
    require(ckpt.model.digest() == rewind.digest, ErrorKind::corruption, "rewind checkpoint digest mismatch");
  return std::move(ckpt.model);
}

std::pair<ModelState, TrainHistory> train_masked(ModelState init, const WeightMask& mask, const DatasetHandle& data,
                                                 RunConfig config, const std::optional<RewindSpec>& rewind,
                                                 bool resume) {
  if (rewind) {
    require(init.epoch == rewind->epoch, ErrorKind::configuration,
            "rewound state is at epoch " + std::to_string(init.epoch) + ", expected " + std::to_string(rewind->epoch));
    require(rewind->epoch < config.epochs || config.epochs == 0, ErrorKind::configuration,
            "rewind epoch must precede the training horizon");
  }
  config.path = TrainPath::full;
  TrainContext context;
  context.weight_mask = &mask;
  context.resume = resume;
  return train(std::move(init), data, config, context);
}

std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::lth: return "lth";
    case InitKind::rr: return "rr";
    case InitKind::rm: return "rm";
  }
  return "?";
}

std::string format_tenths(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", value);
  std::string s = buf;
  return s == "-0.0" ? "0.0" : s;
}

std::vector<LthRow> lth_report(const std::vector<LthRun>& runs) {
  std::vector<LthRow> rows;
  for (const auto& run : runs) {
    if (run.kind != InitKind::lth) continue;
    const LthRun* rr = nullptr;
    const LthRun* rm = nullptr;
    for (const auto& other : runs) {
      if (other.pairing != run.pairing || &other == &run) continue;
      if (other.kind == InitKind::lth) fail(ErrorKind::report, "two LTH runs share pairing key '" + run.pairing + "'");
      const LthRun*& slot = other.kind == InitKind::rr ? rr : rm;
      require(slot == nullptr, ErrorKind::report, "ambiguous partner for pairing key '" + run.pairing + "'");
      slot = &other;
    }
    require(rr != nullptr, ErrorKind::report, "LTH run '" + run.pairing + "' has no RR partner");
    require(rr->scope == run.scope && std::abs(rr->sparsity - run.sparsity) < 1e-9, ErrorKind::report,
            "RR partner of '" + run.pairing + "' differs in scope or sparsity");
    LthRow row{run.scope, run.sparsity, run.accuracy, rr->accuracy, std::nullopt, run.accuracy - rr->accuracy,
               run.rewound};
    if (rm != nullptr) row.rm = rm->accuracy;
    rows.push_back(row);
  }
  for (const auto& run : runs) {
    if (run.kind == InitKind::lth) continue;
    const bool paired = std::any_of(runs.begin(), runs.end(), [&](const LthRun& r) {
      return r.kind == InitKind::lth && r.pairing == run.pairing;
    });
    require(paired, ErrorKind::report, to_string(run.kind) + " run '" + run.pairing + "' has no LTH partner");
  }
  return rows;
}

namespace {

std::string scope_label(PruneScope s) {
  switch (s) {
    case PruneScope::msa: return "MSA";
    case PruneScope::msa_mlp: return "MSA+MLP";
    case PruneScope::conv_all: return "Conv";
  }
  return "?";
}

}  // namespace

std::string render_lth_table(const std::vector<LthRow>& rows) {
  const bool with_rm = std::any_of(rows.begin(), rows.end(), [](const LthRow& r) { return r.rm.has_value(); });
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %9s", "Scope", "Sparsity", "LTH Acc.", "RR Acc.");
  out << line;
  if (with_rm) {
    std::snprintf(line, sizeof line, " %9s", "RM Acc.");
    out << line;
  }
  std::snprintf(line, sizeof line, " %10s %8s\n", "Acc. Diff.", "Rewound");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %8s%% %9s %9s", scope_label(r.scope).c_str(),
                  format_tenths(r.sparsity).c_str(), format_tenths(r.lth).c_str(), format_tenths(r.rr).c_str());
    out << line;
    if (with_rm) {
      std::snprintf(line, sizeof line, " %9s", r.rm ? format_tenths(*r.rm).c_str() : "-");
      out << line;
    }
    std::snprintf(line, sizeof line, " %10s %8s\n", format_tenths(r.diff).c_str(), r.rewound ? "yes" : "no");
    out << line;
  }
  return out.str();
}

std::string lth_csv(const std::vector<LthRow>& rows) {
  std::ostringstream out;
  out << "scope,sparsity,lth_acc,rr_acc,rm_acc,diff,rewound\n";
  for (const auto& r : rows)
    out << to_string(r.scope) << ',' << format_tenths(r.sparsity) << ',' << format_tenths(r.lth) << ','
        << format_tenths(r.rr) << ',' << (r.rm ? format_tenths(*r.rm) : "") << ',' << format_tenths(r.diff) << ','
        << (r.rewound ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace dlth
