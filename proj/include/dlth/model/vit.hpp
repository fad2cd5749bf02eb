#pragma once

#include <vector>

#include "dlth/image.hpp"
#include "dlth/model/config.hpp"
#include "dlth/rng.hpp"
#include "dlth/tensor.hpp"

namespace dlth {

// Original patch indices fed to the encoder, one list per image.
// An empty list means "all patches in grid order".
using KeptIndices = std::vector<std::vector<int>>;

// Post-softmax attention of one image at one layer, [head][query][key].
template <typename T>
struct AttentionLayer {
  int heads = 0;
  int tokens = 0;
  std::vector<T> probs;

  T at(int head, int query, int key) const {
    return probs[static_cast<std::size_t>((head * tokens + query) * tokens + key)];
  }
};

// One image's attention across every encoder layer it passed through.
template <typename T>
struct AttentionTrace {
  std::vector<AttentionLayer<T>> layers;
};

struct VitOptions {
  bool capture_attention = false;
  bool token_logits = false;  // classifier head applied to every patch token too
};

template <typename T>
struct BlockTape {
  Mat<T> ln1_hat, ln1_out;
  Vec<T> ln1_rstd;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // [image * heads + head]
  Mat<T> attn;
  Mat<T> ln2_hat, ln2_out;
  Vec<T> ln2_rstd;
  Mat<T> fc1;
  Mat<T> act;
};

// Activations kept for the backward pass.
template <typename T>
struct VitTape {
  std::vector<int> offsets;      // token row range per image, size count+1
  std::vector<int> pos_index;    // positional-embedding row per token row
  std::vector<int> patch_rows;   // token row of each gathered patch
  Mat<T> patches;                // gathered raw patch vectors
  std::vector<BlockTape<T>> blocks;
  Mat<T> final_hat, final_out;
  Vec<T> final_rstd;
  bool token_logits = false;
};

template <typename T>
struct VitResult {
  Mat<T> logits;                         // [images, classes]
  Mat<T> token_logits;                   // [patch tokens, classes], packed order
  std::vector<AttentionTrace<T>> traces; // per image, when captured
  std::vector<int> offsets;
};

// Adds the ViT parameter layout for `config` to `params` (zero-filled).
template <typename T>
void vit_declare_params(const ModelConfig& config, ParamSet<T>& params);

// Initializes ViT parameters: truncated normal (0.02) for the CLS token and
// positional embeddings, fan-in uniform for linear weights (Glorot for qkv),
// zero biases, unit LayerNorm scales.
void vit_init_params(const ModelConfig& config, ParamSet<float>& params, Rng& rng);

template <typename T>
VitResult<T> vit_forward(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
                         const KeptIndices& kept, const VitOptions& options, VitTape<T>* tape);

// Accumulates parameter gradients into `grads` given dL/dlogits (and
// optionally dL/dtoken_logits in packed token order).
template <typename T>
void vit_backward(const ModelConfig& config, const ParamSet<T>& params, const VitTape<T>& tape,
                  const Mat<T>& dlogits, const Mat<T>* dtoken_logits, ParamSet<T>& grads);

// Runs a single block on token rows; exposed for the ticket selector, which
// drives the encoder layer by layer.
template <typename T>
void vit_embed(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
               const KeptIndices& kept, Mat<T>& tokens, std::vector<int>& offsets, VitTape<T>* tape);

template <typename T>
void vit_block(const ModelConfig& config, const ParamSet<T>& params, int layer, Mat<T>& tokens,
               const std::vector<int>& offsets, BlockTape<T>* tape, std::vector<AttentionLayer<T>>* attention);

}  // namespace dlth
