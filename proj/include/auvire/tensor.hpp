#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace auvire {

// Shape or argument contract broken by the caller.
struct contract_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw contract_error("tensor: empty shape");
  std::size_t n = 1;
  for (int s : shape) {
    if (s <= 0) throw contract_error("tensor: non-positive dimension " + std::to_string(s));
    n *= static_cast<std::size_t>(s);
  }
  return n;
}

// Dense row-major tensor of rank 1..3.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {
    check_rank();
  }

  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_rank();
    if (data.size() != checked_numel(shape)) throw contract_error("tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& at(int i) { return data[static_cast<std::size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<std::size_t>(i)]; }

  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  void check_rank() const {
    if (shape.empty() || shape.size() > 3) throw contract_error("tensor: rank must be 1..3");
  }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace auvire
