#include "dlth/model/cnn.hpp"

#include <cmath>
#include <string>

#include "dlth/model/layers.hpp"

namespace dlth {

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

std::string block_prefix(int stage, int index) {
  return "layer" + std::to_string(stage) + "." + std::to_string(index) + ".";
}

void declare_bn(auto& params, const std::string& prefix, int channels) {
  params.add(prefix + ".weight", {channels});
  params.add(prefix + ".bias", {channels});
  params.add(prefix + ".running_mean", {channels}, false);
  params.add(prefix + ".running_var", {channels}, false);
}

template <typename T>
void im2col3x3(const Mat<T>& x, int batch, int h, int w, int c, int stride, ConvTape<T>& tape) {
  const int oh = h / stride;
  const int ow = w / stride;
  tape.batch = batch;
  tape.in_h = h;
  tape.in_w = w;
  tape.in_c = c;
  tape.out_h = oh;
  tape.out_w = ow;
  tape.cols.setZero(batch * oh * ow, 9 * c);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T* dst = tape.cols.row((b * oh + oy) * ow + ox).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            const T* src = x.row((b * h + iy) * w + ix).data();
            std::copy(src, src + c, dst + (ky * 3 + kx) * c);
          }
        }
      }
}

template <typename T>
void col2im3x3(const Mat<T>& dcols, const ConvTape<T>& tape, int stride, Mat<T>& dx) {
  const int h = tape.in_h, w = tape.in_w, c = tape.in_c, oh = tape.out_h, ow = tape.out_w;
  dx.setZero(tape.batch * h * w, c);
  for (int b = 0; b < tape.batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const auto src_row = dcols.row((b * oh + oy) * ow + ox);
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            dx.row((b * h + iy) * w + ix) += src_row.segment((ky * 3 + kx) * c, c);
          }
        }
      }
}

template <typename T>
void subsample2(const Mat<T>& x, int batch, int h, int w, int c, ConvTape<T>& tape) {
  const int oh = h / 2, ow = w / 2;
  tape.batch = batch;
  tape.in_h = h;
  tape.in_w = w;
  tape.in_c = c;
  tape.out_h = oh;
  tape.out_w = ow;
  tape.cols.resize(batch * oh * ow, c);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) tape.cols.row((b * oh + oy) * ow + ox) = x.row((b * h + 2 * oy) * w + 2 * ox);
}

template <typename T>
void unsubsample2(const Mat<T>& dcols, const ConvTape<T>& tape, Mat<T>& dx) {
  const int h = tape.in_h, w = tape.in_w, oh = tape.out_h, ow = tape.out_w;
  dx.setZero(tape.batch * h * w, tape.in_c);
  for (int b = 0; b < tape.batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) dx.row((b * h + 2 * oy) * w + 2 * ox) = dcols.row((b * oh + oy) * ow + ox);
}

template <typename T>
void batch_norm_forward(const Mat<T>& x, ParamSet<T>& params, const std::string& prefix, bool training, NormTape<T>& tape,
                        Mat<T>& y) {
  const auto& gamma = params.at(prefix + ".weight").vector();
  const auto& beta = params.at(prefix + ".bias").vector();
  auto running_mean = params.at(prefix + ".running_mean").vector();
  auto running_var = params.at(prefix + ".running_var").vector();
  const auto rows = x.rows();
  Vec<T> mean, var;
  if (training) {
    mean = x.colwise().mean().transpose();
    var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    const T m = static_cast<T>(kBatchNormMomentum);
    const T unbias = rows > 1 ? static_cast<T>(rows) / static_cast<T>(rows - 1) : T(1);
    running_mean = (T(1) - m) * running_mean + m * mean;
    running_var = (T(1) - m) * running_var + m * unbias * var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  tape.rstd = (var.array() + static_cast<T>(kBatchNormEps)).rsqrt();
  tape.hat = (x.rowwise() - mean.transpose()).array().rowwise() * tape.rstd.transpose().array();
  y = (tape.hat.array().rowwise() * gamma.transpose().array()).rowwise() + beta.transpose().array();
}

template <typename T>
void batch_norm_backward(const NormTape<T>& tape, const ParamSet<T>& params, const std::string& prefix, const Mat<T>& dy,
                         ParamSet<T>& grads, Mat<T>& dx) {
  const auto& gamma = params.at(prefix + ".weight").vector();
  const T n = static_cast<T>(dy.rows());
  grads.at(prefix + ".weight").vector() += (dy.array() * tape.hat.array()).colwise().sum().matrix().transpose();
  grads.at(prefix + ".bias").vector() += dy.colwise().sum().transpose();
  const Mat<T> dhat = dy.array().rowwise() * gamma.transpose().array();
  const Vec<T> sum_dhat = dhat.colwise().sum().transpose();
  const Vec<T> sum_dhat_hat = (dhat.array() * tape.hat.array()).colwise().sum().matrix().transpose();
  dx = (dhat * n).rowwise() - sum_dhat.transpose();
  dx.array() -= tape.hat.array().rowwise() * sum_dhat_hat.transpose().array();
  dx.array().rowwise() *= (tape.rstd / n).transpose().array();
}

template <typename T>
void relu_backward(const Mat<T>& out, Mat<T>& grad) {
  grad = (out.array() > T(0)).select(grad, T(0));
}

}  // namespace

template <typename T>
void cnn_declare_params(const ModelConfig& config, ParamSet<T>& params) {
  const int w = config.embed_dim;
  params.add("stem.conv.weight", {w, 9 * config.in_channels});
  declare_bn(params, "stem.bn", w);
  int in = w;
  for (int s = 0; s < 3; ++s) {
    const int out = w << s;
    for (int i = 0; i < config.cnn_blocks_per_stage(); ++i) {
      const auto p = block_prefix(s, i);
      params.add(p + "conv1.weight", {out, 9 * in});
      declare_bn(params, p + "bn1", out);
      params.add(p + "conv2.weight", {out, 9 * out});
      declare_bn(params, p + "bn2", out);
      if (in != out) {
        params.add(p + "shortcut.conv.weight", {out, in});
        declare_bn(params, p + "shortcut.bn", out);
      }
      in = out;
    }
  }
  params.add("fc.weight", {config.num_classes, in});
  params.add("fc.bias", {config.num_classes});
}

void cnn_init_params(const ModelConfig& config, ParamSet<float>& params, Rng& rng) {
  (void)config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    auto& t = params[i];
    if (name.ends_with("conv.weight") || name.ends_with("conv1.weight") || name.ends_with("conv2.weight")) {
      const double fan_in = t.shape[1];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
    } else if (name == "fc.weight") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape[1]));
      for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (name.ends_with("running_var") || (name.ends_with(".weight") && name.find("bn") != std::string::npos)) {
      t.fill(1.0f);
    } else {
      t.fill(0.0f);
    }
  }
}

template <typename T>
Mat<T> cnn_forward(const ModelConfig& config, ParamSet<T>& params, const ImageBatch<T>& batch, bool training,
                   CnnTape<T>* tape) {
  require(config.arch == ArchKind::cnn, ErrorKind::configuration, "model is not a CNN");
  require(batch.count >= 1, ErrorKind::shape, "empty batch");
  require(batch.height == config.image_size && batch.width == config.image_size && batch.channels == config.in_channels,
          ErrorKind::shape, "batch shape does not match model configuration");
  CnnTape<T> local;
  CnnTape<T>& tp = tape != nullptr ? *tape : local;
  const int b = batch.count;
  int h = config.image_size, w = config.image_size, c = config.in_channels;
  tp.batch = b;

  // CHW images to NHWC rows.
  Mat<T> x(b * h * w, c);
  for (int i = 0; i < b; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          x((i * h + y) * w + xx, ch) = batch.image(i)[(static_cast<std::size_t>(ch) * h + y) * w + xx];

  Mat<T> y;
  im2col3x3(x, b, h, w, c, 1, tp.stem);
  y.noalias() = tp.stem.cols * params.at("stem.conv.weight").matrix().transpose();
  batch_norm_forward(y, params, "stem.bn", training, tp.stem_bn, x);
  x = x.cwiseMax(T(0));
  c = config.embed_dim;
  if (tape != nullptr) tp.stem_out = x;

  const int per_stage = config.cnn_blocks_per_stage();
  tp.blocks.resize(static_cast<std::size_t>(3 * per_stage));
  Mat<T> branch, shortcut;
  for (int s = 0; s < 3; ++s) {
    const int out_c = config.embed_dim << s;
    for (int i = 0; i < per_stage; ++i) {
      auto& bt = tp.blocks[static_cast<std::size_t>(s * per_stage + i)];
      const auto p = block_prefix(s, i);
      const int stride = (s > 0 && i == 0) ? 2 : 1;
      bt.projected = c != out_c;

      im2col3x3(x, b, h, w, c, stride, bt.conv1);
      y.noalias() = bt.conv1.cols * params.at(p + "conv1.weight").matrix().transpose();
      batch_norm_forward(y, params, p + "bn1", training, bt.bn1, branch);
      branch = branch.cwiseMax(T(0));
      if (tape != nullptr) bt.relu1 = branch;
      const int oh = h / stride, ow = w / stride;
      im2col3x3(branch, b, oh, ow, out_c, 1, bt.conv2);
      y.noalias() = bt.conv2.cols * params.at(p + "conv2.weight").matrix().transpose();
      batch_norm_forward(y, params, p + "bn2", training, bt.bn2, branch);

      if (bt.projected) {
        if (stride == 2) {
          subsample2(x, b, h, w, c, bt.shortcut);
        } else {
          bt.shortcut.cols = x;
        }
        y.noalias() = bt.shortcut.cols * params.at(p + "shortcut.conv.weight").matrix().transpose();
        batch_norm_forward(y, params, p + "shortcut.bn", training, bt.shortcut_bn, shortcut);
        x = (branch + shortcut).cwiseMax(T(0));
      } else {
        x = (branch + x).cwiseMax(T(0));
      }
      if (tape != nullptr) bt.out = x;
      h = oh;
      w = ow;
      c = out_c;
    }
  }

  tp.final_h = h;
  tp.final_w = w;
  tp.pooled.resize(b, c);
  for (int i = 0; i < b; ++i) tp.pooled.row(i) = x.middleRows(i * h * w, h * w).colwise().mean();
  Mat<T> logits;
  linear_forward(tp.pooled, params.at("fc.weight"), params.at("fc.bias"), logits);
  return logits;
}

template <typename T>
void cnn_backward(const ModelConfig& config, const ParamSet<T>& params, const CnnTape<T>& tape, const Mat<T>& dlogits,
                  ParamSet<T>& grads) {
  const int b = tape.batch;
  Mat<T> dpooled;
  linear_backward(tape.pooled, params.at("fc.weight"), dlogits, grads.at("fc.weight"), grads.at("fc.bias"), &dpooled);

  const int hw = tape.final_h * tape.final_w;
  Mat<T> dx(b * hw, dpooled.cols());
  for (int i = 0; i < b; ++i)
    dx.middleRows(i * hw, hw).rowwise() = dpooled.row(i) / static_cast<T>(hw);

  const int per_stage = config.cnn_blocks_per_stage();
  Mat<T> dy, dbranch, dcols, dtmp, dshort;
  for (int s = 2; s >= 0; --s) {
    for (int i = per_stage - 1; i >= 0; --i) {
      const auto& bt = tape.blocks[static_cast<std::size_t>(s * per_stage + i)];
      const auto p = block_prefix(s, i);
      const int stride = (s > 0 && i == 0) ? 2 : 1;
      relu_backward(bt.out, dx);  // dx now grad at pre-activation sum

      // Residual branch.
      batch_norm_backward(bt.bn2, params, p + "bn2", dx, grads, dy);
      grads.at(p + "conv2.weight").matrix().noalias() += dy.transpose() * bt.conv2.cols;
      dcols.noalias() = dy * params.at(p + "conv2.weight").matrix();
      col2im3x3(dcols, bt.conv2, 1, dbranch);
      relu_backward(bt.relu1, dbranch);
      batch_norm_backward(bt.bn1, params, p + "bn1", dbranch, grads, dy);
      grads.at(p + "conv1.weight").matrix().noalias() += dy.transpose() * bt.conv1.cols;
      dcols.noalias() = dy * params.at(p + "conv1.weight").matrix();
      col2im3x3(dcols, bt.conv1, stride, dtmp);

      // Shortcut.
      if (bt.projected) {
        batch_norm_backward(bt.shortcut_bn, params, p + "shortcut.bn", dx, grads, dy);
        grads.at(p + "shortcut.conv.weight").matrix().noalias() += dy.transpose() * bt.shortcut.cols;
        dcols.noalias() = dy * params.at(p + "shortcut.conv.weight").matrix();
        if (stride == 2) {
          unsubsample2(dcols, bt.shortcut, dshort);
        } else {
          dshort = dcols;
        }
        dx = dtmp + dshort;
      } else {
        dx += dtmp;
      }
    }
  }

  relu_backward(tape.stem_out, dx);
  batch_norm_backward(tape.stem_bn, params, "stem.bn", dx, grads, dy);
  grads.at("stem.conv.weight").matrix().noalias() += dy.transpose() * tape.stem.cols;
}

#define DLTH_INSTANTIATE_CNN(T)                                                                                      \
  template void cnn_declare_params<T>(const ModelConfig&, ParamSet<T>&);                                             \
  template Mat<T> cnn_forward<T>(const ModelConfig&, ParamSet<T>&, const ImageBatch<T>&, bool, CnnTape<T>*);         \
  template void cnn_backward<T>(const ModelConfig&, const ParamSet<T>&, const CnnTape<T>&, const Mat<T>&,            \
                                ParamSet<T>&);

DLTH_INSTANTIATE_CNN(float)
DLTH_INSTANTIATE_CNN(double)

}  // namespace dlth
