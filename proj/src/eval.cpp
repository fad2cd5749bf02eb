#include "dlth/eval.hpp"

#include <cstdio>
#include <sstream>

#include "dlth/model/macs.hpp"
#include "dlth/patch_apply.hpp"
#include "dlth/weight_lth.hpp"

namespace dlth {

std::string to_string(EvalMode m) { return m == EvalMode::dense ? "dense" : "sparse"; }

double evaluate(const ModelState& model, const DatasetHandle& test, EvalMode mode, const TicketStore* store,
                InputMode input_mode, int batch_size) {
  require(test.size() > 0, ErrorKind::degenerate_input, "empty test set");
  const bool masked = mode == EvalMode::sparse;
  if (masked) {
    require(store != nullptr, ErrorKind::store_coverage, "sparse evaluation needs a ticket store");
    // ids repeat across splits, so coverage alone cannot tell stores apart
    require(store->manifest().dataset_id == test.digest, ErrorKind::provenance,
            "ticket store was built for another dataset");
    for (const auto& id : test.ids) store->get(id);  // coverage before any compute
    if (input_mode == InputMode::remove)
      require(model.config.arch == ArchKind::vit && store->manifest().grid_side == model.config.grid_side(),
              ErrorKind::configuration, "token removal needs a ViT on the store's patch grid");
  }
  std::int64_t correct = 0;
  for (int start = 0; start < test.size(); start += batch_size) {
    const int end = std::min(test.size(), start + batch_size);
    ImageBatch<float> batch;
    KeptIndices kept;
    for (int i = start; i < end; ++i) {
      const auto& img = test.images[static_cast<std::size_t>(i)];
      if (!masked) {
        batch.append(img, test.stats);
        continue;
      }
      const auto& mask = store->get(test.ids[static_cast<std::size_t>(i)]).mask;
      if (input_mode == InputMode::occlude) {
        batch.append(occlude_patches(img, mask, img.height / mask.grid_side), test.stats);
      } else {
        batch.append(img, test.stats);
        kept.push_back(mask.kept_indices());
      }
    }
    const auto logits = predict(model, batch, kept);
    for (int r = 0; r < batch.count; ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == test.labels[static_cast<std::size_t>(start + r)]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / test.size();
}

EvalMatrix build_matrix(const MatrixModels& models, const DatasetHandle& test, const TicketStore& store,
                        InputMode input_mode) {
  require(models.lt != nullptr && models.rc != nullptr && models.pretrain != nullptr, ErrorKind::comparison,
          "matrix needs LT, RC and pretrain models");
  require(models.lt->config == models.rc->config && models.lt->config == models.pretrain->config,
          ErrorKind::comparison, "LT, RC and pretrain models must share one configuration");
  EvalMatrix m;
  m.sparsity = target_sparsity(store.manifest().selector);
  m.store_fingerprint = store.manifest().fingerprint;
  m.pretrain_dense = evaluate(*models.pretrain, test, EvalMode::dense);
  if (input_mode == InputMode::occlude) {
    m.occluded_dense = true;
    m.lt_dense = evaluate(*models.lt, test, EvalMode::sparse, &store, InputMode::occlude);
    m.rc_dense = evaluate(*models.rc, test, EvalMode::sparse, &store, InputMode::occlude);
    return m;
  }
  m.pretrain_sparse = evaluate(*models.pretrain, test, EvalMode::sparse, &store);
  m.lt_dense = evaluate(*models.lt, test, EvalMode::dense);
  m.lt_sparse = evaluate(*models.lt, test, EvalMode::sparse, &store);
  m.rc_dense = evaluate(*models.rc, test, EvalMode::dense);
  m.rc_sparse = evaluate(*models.rc, test, EvalMode::sparse, &store);
  return m;
}

WinningTicketVerdict verdict(const EvalMatrix& matrix, double epsilon, double delta) {
  constexpr double tol = 1e-9;
  WinningTicketVerdict v;
  v.epsilon = epsilon;
  v.delta = delta;
  require(matrix.pretrain_dense.has_value(), ErrorKind::verdict, "verdict needs the pretrain accuracy");
  if (matrix.lt_sparse && matrix.rc_sparse) {
    v.common_mode = EvalMode::sparse;
    v.lt = *matrix.lt_sparse;
    v.rc = *matrix.rc_sparse;
  } else if (matrix.lt_dense && matrix.rc_dense) {
    v.common_mode = EvalMode::dense;
    v.lt = *matrix.lt_dense;
    v.rc = *matrix.rc_dense;
  } else {
    fail(ErrorKind::verdict, "LT and RC share no evaluated mode");
  }
  v.pretrain = *matrix.pretrain_dense;
  v.match_pretrain = v.pretrain - v.lt <= epsilon + tol;
  v.clear_advantage = v.lt - v.rc >= delta - tol;
  v.is_winning = v.match_pretrain && v.clear_advantage;
  return v;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

}  // namespace

std::string render_matrix(const EvalMatrix& m) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-22s %s%%\n", "Patch sparsity", format_tenths(100.0 * m.sparsity).c_str());
  out << line;
  const char* dense_note = m.occluded_dense ? " (occluded)" : "";
  const std::pair<std::string, const std::optional<double>*> rows[] = {
      {"LT-Sparse Acc. (%)", &m.lt_sparse},
      {std::string("LT-Dense Acc. (%)") + dense_note, &m.lt_dense},
      {std::string("RC-Dense Acc. (%)") + dense_note, &m.rc_dense},
      {"RC-Sparse Acc. (%)", &m.rc_sparse},
      {"Pretrain Acc. (%)", &m.pretrain_dense},
      {"Pretrain-Sparse (%)", &m.pretrain_sparse},
  };
  for (const auto& [label, value] : rows) {
    std::snprintf(line, sizeof line, "%-30s %8s\n", label.c_str(), cell(*value).c_str());
    out << line;
  }
  return out.str();
}

std::string matrix_csv(const EvalMatrix& m) {
  std::ostringstream out;
  out << "row,accuracy\n";
  auto row = [&](const char* name, const std::optional<double>& v) { out << name << ',' << (v ? cell(v) : "") << '\n'; };
  row("LT-Sparse", m.lt_sparse);
  row("LT-Dense", m.lt_dense);
  row("RC-Dense", m.rc_dense);
  row("RC-Sparse", m.rc_sparse);
  row("Pretrain", m.pretrain_dense);
  row("Pretrain-Sparse", m.pretrain_sparse);
  return out.str();
}

std::string render_verdict(const WinningTicketVerdict& v) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "mode=%s lt=%.2f rc=%.2f pretrain=%.2f epsilon=%.2f delta=%.2f match_pretrain=%s "
                "clear_advantage=%s winning_ticket=%s\n",
                to_string(v.common_mode).c_str(), v.lt, v.rc, v.pretrain, v.epsilon, v.delta,
                v.match_pretrain ? "yes" : "no", v.clear_advantage ? "yes" : "no", v.is_winning ? "yes" : "no");
  return buf;
}

MacsReport macs_report(const ModelConfig& config, const TicketStore& store) {
  MacsReport r;
  const int n = config.arch == ArchKind::vit ? config.num_patches() : 0;
  r.dense = static_cast<double>(count_macs(config, n + 1));
  // Occlusion keeps the input dense, so only a token-removal store on the
  // model's own grid saves compute.
  const bool removal = config.arch == ArchKind::vit && store.manifest().grid_side == config.grid_side();
  if (!removal || store.size() == 0) {
    r.sparse = r.dense;
    r.ratio = 1.0;
    return r;
  }
  double sum = 0.0;
  for (const auto& [id, rec] : store.records()) sum += static_cast<double>(count_macs(config, rec.mask.kept_count() + 1));
  r.sparse = sum / static_cast<double>(store.size());
  r.ratio = r.sparse / r.dense;
  return r;
}

}  // namespace dlth
