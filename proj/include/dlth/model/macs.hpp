#pragma once

#include <cstdint>

#include "dlth/model/config.hpp"

namespace dlth {

// Closed-form multiply-accumulate count of one forward pass.
//
// ViT, n tokens including CLS, width d, MLP ratio r:
//   patch embedding   (n-1) * patch_dim * d
//   per layer         4 n d^2 + 2 n^2 d  (qkv, projection, QK^T, PV)
//                     + 2 r n d^2        (MLP)
//   classifier        d * classes
// Norms, softmax and residual additions are not counted.
//
// CNN: sum of convolution and classifier MACs at full resolution; `n_tokens`
// only has to be valid since occlusion never changes the input shape.
std::uint64_t count_macs(const ModelConfig& config, int n_tokens);

}  // namespace dlth
