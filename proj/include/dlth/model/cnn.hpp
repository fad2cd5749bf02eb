#pragma once

#include <vector>

#include "dlth/image.hpp"
#include "dlth/model/config.hpp"
#include "dlth/rng.hpp"
#include "dlth/tensor.hpp"

namespace dlth {

// CIFAR-style residual network: 3x3 stem, three stages of basic blocks
// (widths w, 2w, 4w; stride 2 between stages with 1x1 projection
// shortcuts), batch norm after every convolution, global average pooling
// and a linear classifier. Activations are NHWC, stored as [pixels, channels].

template <typename T>
struct ConvTape {
  Mat<T> cols;
  int batch = 0, in_h = 0, in_w = 0, in_c = 0, out_h = 0, out_w = 0;
};

template <typename T>
struct NormTape {
  Mat<T> hat;
  Vec<T> rstd;
};

template <typename T>
struct ResidualTape {
  ConvTape<T> conv1, conv2, shortcut;
  NormTape<T> bn1, bn2, shortcut_bn;
  Mat<T> relu1;
  Mat<T> out;
  bool projected = false;
};

template <typename T>
struct CnnTape {
  ConvTape<T> stem;
  NormTape<T> stem_bn;
  Mat<T> stem_out;
  std::vector<ResidualTape<T>> blocks;
  Mat<T> pooled;
  int batch = 0, final_h = 0, final_w = 0;
};

template <typename T>
void cnn_declare_params(const ModelConfig& config, ParamSet<T>& params);

// Kaiming-normal convolutions, unit BN scales, unit running variances.
void cnn_init_params(const ModelConfig& config, ParamSet<float>& params, Rng& rng);

// `training` selects batch statistics (and updates running statistics in
// `params`); otherwise running statistics are used.
template <typename T>
Mat<T> cnn_forward(const ModelConfig& config, ParamSet<T>& params, const ImageBatch<T>& batch, bool training,
                   CnnTape<T>* tape);

template <typename T>
void cnn_backward(const ModelConfig& config, const ParamSet<T>& params, const CnnTape<T>& tape, const Mat<T>& dlogits,
                  ParamSet<T>& grads);

}  // namespace dlth
