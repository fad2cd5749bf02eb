#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlth/error.hpp"

namespace dlth {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline std::size_t shape_numel(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T, Eigen::aligned_allocator<T>> data;  // fixed alignment keeps Eigen reductions reproducible

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), T{0}) {}

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  // 2-D view: first axis rows, remaining axes flattened.
  MatMap<T> matrix() {
    const int rows = shape.empty() ? 1 : shape[0];
    return MatMap<T>(data.data(), rows, rows == 0 ? 0 : static_cast<int>(numel()) / rows);
  }
  ConstMatMap<T> matrix() const {
    const int rows = shape.empty() ? 1 : shape[0];
    return ConstMatMap<T>(data.data(), rows, rows == 0 ? 0 : static_cast<int>(numel()) / rows);
  }
  Eigen::Map<Vec<T>> vector() { return Eigen::Map<Vec<T>>(data.data(), static_cast<Eigen::Index>(numel())); }
  Eigen::Map<const Vec<T>> vector() const {
    return Eigen::Map<const Vec<T>>(data.data(), static_cast<Eigen::Index>(numel()));
  }

  void fill(T value) { std::fill(data.begin(), data.end(), value); }
};

// Ordered, named tensor collection. The name list is a function of the model
// configuration alone, so masks and checkpoints align by name.
template <typename T>
class ParamSet {
 public:
  Tensor<T>& add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    require(!index_.contains(name), ErrorKind::configuration, "duplicate parameter " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    trainable_.push_back(trainable);
    tensors_.emplace_back(std::move(shape));
    return tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool trainable(std::size_t i) const { return trainable_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

  Tensor<T>& at(const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<T>& at(const std::string& name) const { return tensors_[lookup(name)]; }

  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::alignment, "unknown parameter " + name);
    return it->second;
  }

  std::size_t trainable_count() const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < size(); ++i)
      if (trainable_[i]) total += tensors_[i].numel();
    return total;
  }

  // Same names and shapes, zero contents.
  ParamSet zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].shape, trainable_[i]);
    return out;
  }

  void zero() {
    for (auto& t : tensors_) t.fill(T{0});
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = out.add(names_[i], tensors_[i].shape, trainable_[i]);
      std::transform(tensors_[i].data.begin(), tensors_[i].data.end(), dst.data.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

  bool same_layout(const ParamSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (tensors_[i].shape != other.tensors_[i].shape) return false;
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.tensors_[i].data != b.tensors_[i].data) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<bool> trainable_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dlth
