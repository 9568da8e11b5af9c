#pragma once

// Shared test helpers. The finite-difference gradient oracle lives here, in
// test code only, and never calls into Tape::backward for its estimates.

#include <cmath>
#include <functional>
#include <vector>

#include "tsbench/autodiff.hpp"
#include "tsbench/tensor.hpp"

namespace tsbench_test {

using tsbench::Rng;
using tsbench::Tape;
using tsbench::Tensor;

// Builds the scalar loss on a fresh tape from tracked aliases of `inputs`.
using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Tensor loss = build(tape, leaves);
  return (*loss.data)[0];
}

// Central finite differences (step 1e-6, double precision) against one
// backward pass. Returns the max relative error with an absolute floor of
// 1e-2 in the denominator so near-zero gradients compare on absolute terms.
inline double gradcheck(const LossBuilder& build, std::vector<Tensor>& inputs, double h = 1e-6) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Tensor loss = build(tape, leaves);
  const auto grads = tape.backward(loss);

  double max_rel = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double>* g = grads.find(leaves[i]);
    auto& data = *inputs[i].data;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double orig = data[j];
      data[j] = orig + h;
      const double up = eval_loss(build, inputs);
      data[j] = orig - h;
      const double dn = eval_loss(build, inputs);
      data[j] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = g ? (*g)[j] : 0.0;
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// Random projection to a scalar: sum(out * r) with r fixed.
inline tsbench::Tensor project(Tape& tape, const Tensor& out, const Tensor& r) {
  return tsbench::sum_all(tape, tsbench::mul(tape, out, r));
}

// Values kept away from relu/abs kinks.
inline Tensor random_away_from_zero(Rng& rng, tsbench::Shape shape, double lo = 0.1, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data) {
    const double mag = rng.uniform(lo, hi);
    v = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return t;
}

}  // namespace tsbench_test
