#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dlth {

enum class MaskProvenance { ticket, random };

std::string to_string(MaskProvenance p);
MaskProvenance parse_provenance(const std::string& text);

// Per-image keep/drop decision over the patch grid, row-major. A winning
// ticket (provenance ticket) or a random subset (provenance random).
struct PatchMask {
  int grid_side = 0;
  std::vector<std::uint8_t> bits;  // 1 = keep
  MaskProvenance provenance = MaskProvenance::ticket;
  std::uint64_t seed = 0;          // random masks only
  double target_sparsity = 0.0;

  static PatchMask all_ones(int grid_side);
  static PatchMask from_indices(int grid_side, const std::vector<int>& kept);

  int size() const { return grid_side * grid_side; }
  int kept_count() const;
  bool keeps(int index) const { return bits[static_cast<std::size_t>(index)] != 0; }
  // Kept original indices, ascending.
  std::vector<int> kept_indices() const;
  // Column c maps to grid_side-1-c; used when an image is flipped.
  PatchMask flipped_horizontal() const;

  // Little-endian bit packing, padded to a byte boundary.
  std::vector<std::uint8_t> packed() const;
  static std::vector<std::uint8_t> unpack(const std::vector<std::uint8_t>& bytes, int bit_count);

  friend PatchMask operator&(const PatchMask& a, const PatchMask& b);
  friend bool operator==(const PatchMask& a, const PatchMask& b) {
    return a.grid_side == b.grid_side && a.bits == b.bits;
  }
};

}  // namespace dlth
