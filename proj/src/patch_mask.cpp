#include "dlth/patch_mask.hpp"

#include <algorithm>

#include "dlth/error.hpp"

namespace dlth {

std::string to_string(MaskProvenance p) { return p == MaskProvenance::ticket ? "ticket" : "random"; }

MaskProvenance parse_provenance(const std::string& text) {
  if (text == "ticket") return MaskProvenance::ticket;
  if (text == "random") return MaskProvenance::random;
  fail(ErrorKind::argument, "unknown mask provenance '" + text + "'");
}

PatchMask PatchMask::all_ones(int grid_side) {
  PatchMask m;
  m.grid_side = grid_side;
  m.bits.assign(static_cast<std::size_t>(grid_side * grid_side), 1);
  return m;
}

PatchMask PatchMask::from_indices(int grid_side, const std::vector<int>& kept) {
  PatchMask m;
  m.grid_side = grid_side;
  m.bits.assign(static_cast<std::size_t>(grid_side * grid_side), 0);
  for (int i : kept) {
    require(i >= 0 && i < m.size(), ErrorKind::argument, "patch index out of range");
    m.bits[static_cast<std::size_t>(i)] = 1;
  }
  return m;
}

int PatchMask::kept_count() const {
  return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<int> PatchMask::kept_indices() const {
  std::vector<int> out;
  out.reserve(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out.push_back(static_cast<int>(i));
  return out;
}

PatchMask PatchMask::flipped_horizontal() const {
  PatchMask out = *this;
  for (int r = 0; r < grid_side; ++r)
    for (int c = 0; c < grid_side; ++c)
      out.bits[static_cast<std::size_t>(r * grid_side + c)] = bits[static_cast<std::size_t>(r * grid_side + grid_side - 1 - c)];
  return out;
}

std::vector<std::uint8_t> PatchMask::packed() const {
  std::vector<std::uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] | (1u << (i % 8)));
  return bytes;
}

std::vector<std::uint8_t> PatchMask::unpack(const std::vector<std::uint8_t>& bytes, int bit_count) {
  require(bytes.size() * 8 >= static_cast<std::size_t>(bit_count), ErrorKind::corruption, "packed mask too short");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(bit_count));
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return bits;
}

PatchMask operator&(const PatchMask& a, const PatchMask& b) {
  require(a.grid_side == b.grid_side, ErrorKind::shape, "mask grids differ");
  PatchMask out = a;
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
  return out;
}

}  // namespace dlth
