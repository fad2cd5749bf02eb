#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "dlth/model/model.hpp"
#include "dlth/optim.hpp"

namespace dlth {

// Self-describing checkpoint container:
//   "DLTHCKPT 1\n" <u64 header length> <JSON header> <float32 tensor payload>
// The header records config, seed, epoch, the tensor table, the model digest
// (ModelState::digest, the fingerprint ticket stores bind to) and, when
// present, optimizer state with its own digest.
struct Checkpoint {
  ModelState model;
  std::optional<OptimizerState> optimizer;
};

// Returns the model digest.
std::string save_checkpoint(const std::filesystem::path& path, const ModelState& model,
                            const OptimizerState* optimizer = nullptr);

// Verifies the stored digests against recomputed content; a mismatch is a
// corruption error.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads `path` (a file, or a directory searched recursively) and returns the
// checkpoint whose model digest equals `digest`.
Checkpoint checkpoint_restore(const std::filesystem::path& path, const std::string& digest);

// <run_dir>/ckpt/epoch-<n>
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch);

}  // namespace dlth
