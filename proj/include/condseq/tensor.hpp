#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

#include "condseq/errors.hpp"

namespace condseq {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Tensor storage aligned like Eigen's own heap buffers. Vectorised kernels
/// peel differently on differently aligned inputs, which would make results
/// depend on where the allocator happened to place a buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// A named dense tensor stored row-major.
template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  AlignedVector<T> data;

  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }
};

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Ordered collection of named tensors. Order is the checkpoint order.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    const std::size_t idx = tensors_.size();
    index_.emplace(name, idx);
    const std::size_t n = element_count(shape);
    tensors_.push_back({std::move(name), std::move(shape), AlignedVector<T>(n, T(0))});
    return idx;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

  /// Throws InvalidConfig for unknown names.
  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("no tensor named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.data.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& t : out.tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) {
      const auto idx = out.add(t.name, t.shape);
      auto& dst = out[idx].data;
      for (std::size_t i = 0; i < t.data.size(); ++i) dst[i] = static_cast<U>(t.data[i]);
    }
    return out;
  }

 private:
  std::vector<NamedTensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
Eigen::Map<const Mat<T>> as_matrix(const NamedTensor<T>& t) {
  return Eigen::Map<const Mat<T>>(t.data.data(), static_cast<Eigen::Index>(t.shape.at(0)),
                                  static_cast<Eigen::Index>(t.shape.at(1)));
}
template <typename T>
Eigen::Map<Mat<T>> as_matrix(NamedTensor<T>& t) {
  return Eigen::Map<Mat<T>>(t.data.data(), static_cast<Eigen::Index>(t.shape.at(0)),
                            static_cast<Eigen::Index>(t.shape.at(1)));
}
template <typename T>
Eigen::Map<const RowVec<T>> as_row(const NamedTensor<T>& t) {
  return Eigen::Map<const RowVec<T>>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}
template <typename T>
Eigen::Map<RowVec<T>> as_row(NamedTensor<T>& t) {
  return Eigen::Map<RowVec<T>>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

}  // namespace condseq
