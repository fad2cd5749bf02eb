#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlth/data.hpp"
#include "dlth/patch_mask.hpp"
#include "dlth/selector.hpp"

namespace dlth {

struct StoreManifest {
  int format_version = 1;
  std::string fingerprint;  // selector checkpoint digest
  SelectorConfig selector;
  std::string dataset_id;   // dataset content digest
  int grid_side = 0;
  std::string created;      // sidecar only; the container stays byte-reproducible
  int record_count = 0;
};

struct MaskRecord {
  std::string id;
  PatchMask mask;
  std::vector<std::uint16_t> ranking;  // full survival order, see Selection
};

// Dataset-wide image id -> winning ticket map. Records iterate in id order.
class TicketStore {
 public:
  TicketStore() = default;
  explicit TicketStore(StoreManifest manifest) : manifest_(std::move(manifest)) {}

  const StoreManifest& manifest() const { return manifest_; }
  StoreManifest& manifest() { return manifest_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& id) const { return records_.contains(id); }

  // Idempotent for identical bits; different bits under an existing id is a
  // topology violation.
  void put(const std::string& id, const PatchMask& mask, std::vector<std::uint16_t> ranking = {});
  const MaskRecord* find(const std::string& id) const;
  // Store-coverage error when absent.
  const MaskRecord& get(const std::string& id) const;
  const std::map<std::string, MaskRecord>& records() const { return records_; }

  // Provenance error unless the manifest names this fingerprint.
  void require_fingerprint(const std::string& fingerprint) const;

  std::string serialize() const;
  static TicketStore deserialize(const std::string& bytes);
  // Atomic container write plus the `<path>.json` human-readable sidecar.
  void save(const std::filesystem::path& path) const;
  static TicketStore load(const std::filesystem::path& path);
  std::string digest() const;

 private:
  StoreManifest manifest_;
  std::map<std::string, MaskRecord> records_;
};

nlohmann::json manifest_json(const StoreManifest& m, bool with_timestamp);

struct MaterializeOptions {
  std::filesystem::path path;  // when set, progress is saved here
  int flush_every = 256;       // records between saves
  int stop_after = -1;         // new records before returning; -1 = all
  int batch_size = 32;
};

// Fills every missing dataset id. Skips existing records, so an interrupted
// run can resume from its last save. Returns the number of new records.
int materialize(TicketStore& store, const TicketSelector& selector, const DatasetHandle& data,
                const MaterializeOptions& options = {});

struct TopologyReport {
  int checked = 0;
  std::vector<std::string> mismatches;  // sorted ids

  bool clean() const { return mismatches.empty(); }
};

// Recomputes the sample's masks and compares bitwise.
TopologyReport verify_fixed_topology(const TicketStore& store, const TicketSelector& selector,
                                     const DatasetHandle& data, const std::vector<std::string>& sample_ids);

}  // namespace dlth
