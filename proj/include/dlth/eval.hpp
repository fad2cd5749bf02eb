#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dlth/data.hpp"
#include "dlth/model/model.hpp"
#include "dlth/ticket_store.hpp"
#include "dlth/trainer.hpp"

namespace dlth {

enum class EvalMode { dense, sparse };

std::string to_string(EvalMode m);

// Top-1 accuracy in percent. Sparse mode reads every test image's ticket from
// `store` (store-coverage error when one is missing); with InputMode::occlude
// the ticket blacks out patches and the input keeps its dense shape.
double evaluate(const ModelState& model, const DatasetHandle& test, EvalMode mode, const TicketStore* store = nullptr,
                InputMode input_mode = InputMode::remove, int batch_size = 128);

struct EvalMatrix {
  std::optional<double> pretrain_dense, pretrain_sparse;
  std::optional<double> lt_dense, lt_sparse;
  std::optional<double> rc_dense, rc_sparse;
  double sparsity = 0.0;  // store target sparsity
  std::string store_fingerprint;
  bool occluded_dense = false;  // lt/rc dense cells were measured on ticket-occluded inputs
};

struct MatrixModels {
  const ModelState* lt = nullptr;
  const ModelState* rc = nullptr;
  const ModelState* pretrain = nullptr;
};

// RC sparse cells always use the ticket masks from `store`, never the random
// training masks. Under occlusion the sparse cells stay empty.
EvalMatrix build_matrix(const MatrixModels& models, const DatasetHandle& test, const TicketStore& store,
                        InputMode input_mode = InputMode::remove);

struct WinningTicketVerdict {
  bool match_pretrain = false;
  bool clear_advantage = false;
  bool is_winning = false;
  double epsilon = 0.5;
  double delta = 1.0;
  EvalMode common_mode = EvalMode::sparse;
  double lt = 0.0, rc = 0.0, pretrain = 0.0;
};

// match_pretrain: pretrain_dense - lt <= epsilon; clear_advantage: lt - rc >=
// delta, both in the sparse mode when LT and RC have sparse cells, otherwise
// dense. Missing cells raise a verdict error.
WinningTicketVerdict verdict(const EvalMatrix& matrix, double epsilon = 0.5, double delta = 1.0);

std::string render_matrix(const EvalMatrix& matrix);
std::string matrix_csv(const EvalMatrix& matrix);
std::string render_verdict(const WinningTicketVerdict& v);

struct MacsReport {
  double dense = 0.0;
  double sparse = 0.0;  // mean over the store's per-image kept counts
  double ratio = 1.0;
};

MacsReport macs_report(const ModelConfig& config, const TicketStore& store);

}  // namespace dlth
