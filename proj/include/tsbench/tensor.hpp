#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsbench {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of doubles. `node` ties the tensor to the tape that
// recorded it; node < 0 means untracked (a constant as far as autodiff goes).
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
    for (int d : shape)
      if (d < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(shape));
    data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(shape_numel(shape)), fill);
  }

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)) {
    if (static_cast<long long>(values.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    data = std::make_shared<std::vector<double>>(std::move(values));
  }

  long long numel() const { return static_cast<long long>(data->size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator[](std::size_t i) { return (*data)[i]; }
  double operator[](std::size_t i) const { return (*data)[i]; }

  // Element access for rank <= 4; row-major.
  double& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k) {
    return (*data)[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double& at(int i, int j, int k, int l) {
    return (*data)[((static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  double at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * dim(1) + j]; }
  double at(int i, int j, int k) const {
    return (*data)[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k, int l) const {
    return (*data)[((static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  // Deep copy; the copy is untracked.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
  }

  bool all_finite() const {
    for (double v : *data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

// splitmix64; used to derive independent seed streams from one run seed.
inline std::uint64_t split_seed(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Rng {
  std::mt19937_64 gen;

  explicit Rng(std::uint64_t seed = 0) : gen(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen);
  }
  long long uniform_int(long long lo, long long hi) {  // inclusive range
    std::uniform_int_distribution<long long> d(lo, hi);
    return d(gen);
  }

  Tensor normal_tensor(Shape s, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : *t.data) v = normal(mean, stddev);
    return t;
  }
  Tensor uniform_tensor(Shape s, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& v : *t.data) v = uniform(lo, hi);
    return t;
  }
};

}  // namespace tsbench
