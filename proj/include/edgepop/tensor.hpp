#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <type_traits>
#include <utility>
#include <vector>

#include "edgepop/common.hpp"

namespace edgepop {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::F32;
  else return DType::F64;
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major n-d array. Value semantics; the single data carrier for the
// whole engine.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds float or double");

 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  static Tensor from_data(std::vector<int64_t> shape, std::vector<T> data) {
    Tensor t;
    if (checked_numel(shape) != static_cast<int64_t>(data.size())) {
      throw DimError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }

  void fill(T v) { data_.assign(data_.size(), v); }

  Tensor reshaped(std::vector<int64_t> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
      throw DimError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                     " changes element count");
    }
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // NaN/Inf is an error surface, never silent.
  void require_finite(const std::string& what) const {
    if (!all_finite()) throw DataError("non-finite values in " + what);
  }

  uint64_t byte_hash() const {
    return fnv1a64_bytes(data_.data(), data_.size() * sizeof(T));
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t{shape_};
    for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return t;
  }

  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
      if (e < 0) throw DimError("negative extent in shape " + shape_str(shape));
      if (e != 0 && n > std::numeric_limits<int64_t>::max() / (e ? e : 1)) {
        throw DimError("shape overflow " + shape_str(shape));
      }
      n *= e;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> tensor2(std::initializer_list<std::initializer_list<T>> rows) {
  std::vector<T> flat;
  int64_t r = 0, c = -1;
  for (auto& row : rows) {
    if (c < 0) c = static_cast<int64_t>(row.size());
    if (static_cast<int64_t>(row.size()) != c) throw DimError("ragged initializer");
    flat.insert(flat.end(), row.begin(), row.end());
    ++r;
  }
  return Tensor<T>::from_data({r, c}, std::move(flat));
}

}  // namespace edgepop
