#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dlth {

// Every failure the toolkit reports carries one of these kinds so callers
// (and the CLI exit path) can branch without parsing messages.
enum class ErrorKind {
  configuration,
  shape,
  degenerate_input,
  numerical,
  selector,
  argument,
  topology_violation,
  provenance,
  corruption,
  alignment,
  infeasible_sparsity,
  report,
  store_coverage,
  comparison,
  verdict,
  usage,
  ingest,
  invariant_violation,
  io,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dlth
