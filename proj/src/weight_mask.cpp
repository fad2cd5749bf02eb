#include "dlth/weight_mask.hpp"

#include "dlth/digest.hpp"

namespace dlth {

std::string to_string(PruneScope scope) {
  switch (scope) {
    case PruneScope::msa: return "msa";
    case PruneScope::msa_mlp: return "msa_mlp";
    case PruneScope::conv_all: return "conv_all";
  }
  return "?";
}

PruneScope parse_scope(const std::string& text) {
  if (text == "msa") return PruneScope::msa;
  if (text == "msa_mlp" || text == "msa+mlp") return PruneScope::msa_mlp;
  if (text == "conv_all" || text == "conv") return PruneScope::conv_all;
  fail(ErrorKind::configuration, "unknown prune scope '" + text + "'");
}

bool in_scope(PruneScope scope, const std::string& name) {
  const bool msa = name.ends_with("attn.qkv.weight") || name.ends_with("attn.proj.weight");
  const bool mlp = name.ends_with("mlp.fc1.weight") || name.ends_with("mlp.fc2.weight");
  switch (scope) {
    case PruneScope::msa: return msa;
    case PruneScope::msa_mlp: return msa || mlp;
    case PruneScope::conv_all: return name.ends_with(".weight") && name.find("conv") != std::string::npos;
  }
  return false;
}

std::string WeightMask::digest() const {
  Sha256 h;
  h.update(to_string(scope));
  h.update_pod(pruned);
  h.update_pod(total_params);
  for (const auto& [name, bits] : masks) {
    h.update(name);
    h.update(std::as_bytes(std::span(bits)));
  }
  return h.hex();
}

}  // namespace dlth
