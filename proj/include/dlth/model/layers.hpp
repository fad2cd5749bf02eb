#pragma once

// Dense building blocks shared by the ViT and CNN engines. Rows are samples
// (or tokens), columns are features.

#include <cmath>

#include <unsupported/Eigen/SpecialFunctions>

#include "dlth/tensor.hpp"

namespace dlth {

inline constexpr double kLayerNormEps = 1e-6;

// y = x W^T + b, W stored [out, in].
template <typename T, typename Derived>
void linear_forward(const Eigen::MatrixBase<Derived>& x, const Tensor<T>& w, const Tensor<T>& b, Mat<T>& y) {
  y.noalias() = x * w.matrix().transpose();
  y.rowwise() += b.vector().transpose();
}

template <typename T, typename Derived>
void linear_backward(const Eigen::MatrixBase<Derived>& x, const Tensor<T>& w, const Mat<T>& dy, Tensor<T>& dw,
                     Tensor<T>& db, Mat<T>* dx) {
  dw.matrix().noalias() += dy.transpose() * x;
  db.vector() += dy.colwise().sum().transpose();
  if (dx != nullptr) dx->noalias() = dy * w.matrix();
}

template <typename T>
void layer_norm_forward(const Mat<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Mat<T>& hat, Vec<T>& rstd,
                        Mat<T>& y) {
  const auto cols = x.cols();
  const Vec<T> mean = x.rowwise().mean();
  hat = x.colwise() - mean;
  rstd = ((hat.array().square().rowwise().sum() / static_cast<T>(cols)) + static_cast<T>(kLayerNormEps)).rsqrt();
  hat.array().colwise() *= rstd.array();
  y = (hat.array().rowwise() * gamma.vector().transpose().array()).rowwise() + beta.vector().transpose().array();
}

template <typename T>
void layer_norm_backward(const Mat<T>& hat, const Vec<T>& rstd, const Tensor<T>& gamma, const Mat<T>& dy,
                         Tensor<T>& dgamma, Tensor<T>& dbeta, Mat<T>& dx) {
  const auto cols = hat.cols();
  dgamma.vector() += (dy.array() * hat.array()).colwise().sum().matrix().transpose();
  dbeta.vector() += dy.colwise().sum().transpose();
  const Mat<T> dhat = dy.array().rowwise() * gamma.vector().transpose().array();
  const Vec<T> mean_dhat = dhat.rowwise().mean();
  const Vec<T> mean_dhat_hat = (dhat.array() * hat.array()).rowwise().sum() / static_cast<T>(cols);
  dx = dhat.colwise() - mean_dhat;
  dx.array() -= hat.array().colwise() * mean_dhat_hat.array();
  dx.array().colwise() *= rstd.array();
}

// Exact (erf) GELU.
template <typename T>
void gelu_forward(const Mat<T>& x, Mat<T>& y) {
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  y = (static_cast<T>(0.5) * x.array() * (static_cast<T>(1) + (x.array() * inv_sqrt2).erf())).matrix();
}

template <typename T>
void gelu_backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>& dx) {
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T inv_sqrt_2pi = static_cast<T>(0.39894228040143267794);
  const auto cdf = static_cast<T>(0.5) * (static_cast<T>(1) + (x.array() * inv_sqrt2).erf());
  const auto pdf = inv_sqrt_2pi * (static_cast<T>(-0.5) * x.array().square()).exp();
  dx = (dy.array() * (cdf + x.array() * pdf)).matrix();
}

template <typename T>
void softmax_rows(Mat<T>& s) {
  const Vec<T> row_max = s.rowwise().maxCoeff();
  s = (s.colwise() - row_max).array().exp().matrix();
  const Vec<T> row_sum = s.rowwise().sum();
  s.array().colwise() /= row_sum.array();
}

// Mean softmax cross-entropy over rows whose label is >= 0. Writes dL/dlogits
// into `grad` (scaled by `weight / counted_rows`) and returns the
// unweighted mean loss.
template <typename T>
double cross_entropy(const Mat<T>& logits, std::span<const int> labels, Mat<T>& grad, double weight = 1.0) {
  grad = Mat<T>::Zero(logits.rows(), logits.cols());
  int counted = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    if (labels[static_cast<std::size_t>(r)] >= 0) ++counted;
  if (counted == 0) return 0.0;
  double loss = 0.0;
  const T scale = static_cast<T>(weight / counted);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0) continue;
    const T m = logits.row(r).maxCoeff();
    const auto shifted = (logits.row(r).array() - m);
    const T sum = shifted.exp().sum();
    const T log_sum = std::log(sum);
    loss += static_cast<double>(log_sum - shifted(label));
    grad.row(r) = (shifted.exp() / sum).matrix();
    grad(r, label) -= static_cast<T>(1);
    grad.row(r) *= scale;
  }
  return loss / counted;
}

}  // namespace dlth
