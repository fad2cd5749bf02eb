#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlth/image.hpp"
#include "dlth/model/cnn.hpp"
#include "dlth/model/config.hpp"
#include "dlth/model/vit.hpp"
#include "dlth/patch_mask.hpp"
#include "dlth/tensor.hpp"

namespace dlth {

// f_t: a configuration, its named parameters, the epoch counter and the seed
// the run started from.
struct ModelState {
  ModelConfig config;
  ParamSet<float> params;
  int epoch = 0;
  std::uint64_t seed = 0;

  // SHA-256 over config, seed, epoch and every named tensor.
  std::string digest() const;
};

// Deterministic in (config, seed).
ModelState build_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
ParamSet<T> declare_params(const ModelConfig& config);

// Full-input ViT forward with every layer's attention exposed.
template <typename T>
std::pair<Mat<T>, std::vector<AttentionTrace<T>>> forward_with_attention(const ModelConfig& config,
                                                                         const ParamSet<T>& params,
                                                                         const ImageBatch<T>& batch);
std::pair<Mat<float>, std::vector<AttentionTrace<float>>> forward_with_attention(const ModelState& model,
                                                                                 const ImageBatch<float>& batch);

// ViT forward over CLS + kept patches only, each kept token carrying the
// positional embedding of its original grid index. One mask per image.
template <typename T>
Mat<T> forward_subset(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
                      std::span<const PatchMask> masks);
Mat<float> forward_subset(const ModelState& model, const ImageBatch<float>& batch, std::span<const PatchMask> masks);

// Converts masks to kept-index lists, validating grid and emptiness.
KeptIndices kept_from_masks(const ModelConfig& config, std::span<const PatchMask> masks);

// Inference logits for either architecture (CNN in evaluation mode).
Mat<float> predict(const ModelState& model, const ImageBatch<float>& batch, const KeptIndices& kept = {});

struct LossOptions {
  double token_label_weight = 0.0;  // dense per-token loss, mean over surviving tokens
};

struct StepStats {
  double loss = 0.0;
  int correct = 0;
};

// Training-mode forward + backward. Gradients accumulate into `grads`
// (same layout as model params). Token labels, when given, are aligned to the
// packed token order of each image.
template <typename T>
StepStats loss_and_grad(const ModelConfig& config, ParamSet<T>& params, const ImageBatch<T>& batch,
                        const KeptIndices& kept, std::span<const int> labels,
                        const std::vector<std::vector<int>>* token_labels, const LossOptions& options,
                        ParamSet<T>& grads);

}  // namespace dlth
