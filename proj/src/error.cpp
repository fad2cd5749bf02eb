#include "dlth/error.hpp"

namespace dlth {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::degenerate_input: return "degenerate-input error";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::selector: return "selector error";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::topology_violation: return "topology-violation error";
    case ErrorKind::provenance: return "provenance error";
    case ErrorKind::corruption: return "corruption error";
    case ErrorKind::alignment: return "alignment error";
    case ErrorKind::infeasible_sparsity: return "infeasible-sparsity error";
    case ErrorKind::report: return "report error";
    case ErrorKind::store_coverage: return "store-coverage error";
    case ErrorKind::comparison: return "comparison error";
    case ErrorKind::verdict: return "verdict error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::ingest: return "ingest error";
    case ErrorKind::invariant_violation: return "invariant-violation error";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace dlth
