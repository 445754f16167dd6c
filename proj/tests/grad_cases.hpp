#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bestow/grad_check.hpp"
#include "bestow/nn/attention.hpp"
#include "bestow/ops.hpp"
#include "bestow/rng.hpp"

namespace bestow::testing {

// Reduces any tensor to a scalar with fixed random weights so every output
// element gets a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng r(seed);
  return sum(mul(y, r.randn(y.shape())));
}

struct GradCase {
  std::string name;
  std::function<Tensor(const Tensor&)> f;
  Tensor x;
  double tol;
};

/// One check per differentiable op, inputs drawn from `seed`.
inline std::vector<GradCase> op_grad_cases(std::uint64_t seed) {
  Rng r(seed);
  const Tensor a = r.randn({3, 4}), b = r.randn({4, 2}), c = r.randn({3, 4}), row = r.randn({4});
  const Tensor g = r.randn({4}), bias = r.randn({4});
  const Tensor table = r.randn({6, 4});
  const Tensor q = r.randn({3, 8}), k = r.randn({5, 8}), v = r.randn({5, 8});
  const auto m = nn::AttentionMask::prefix({0, 2, 5}, 5);
  // relu is not differentiable at 0; keep probes away from the kink
  Tensor away = a.detach();
  for (double& e : away.data_mut()) e += e >= 0 ? 0.1 : -0.1;
  return {
      {"matmul_lhs", [=](const Tensor& x) { return weighted_sum(matmul(x, b)); }, a, 1e-4},
      {"matmul_rhs", [=](const Tensor& x) { return weighted_sum(matmul(a, x)); }, b, 1e-4},
      {"add", [=](const Tensor& x) { return weighted_sum(add(x, c)); }, a, 1e-4},
      {"sub", [=](const Tensor& x) { return weighted_sum(sub(c, x)); }, a, 1e-4},
      {"mul", [=](const Tensor& x) { return weighted_sum(mul(x, c)); }, a, 1e-4},
      {"scale", [=](const Tensor& x) { return weighted_sum(scale(x, -1.7)); }, a, 1e-4},
      {"add_row", [=](const Tensor& x) { return weighted_sum(add_row(a, x)); }, row, 1e-4},
      {"tanh", [=](const Tensor& x) { return weighted_sum(bestow::tanh(x)); }, a, 1e-4},
      {"gelu", [=](const Tensor& x) { return weighted_sum(gelu(x)); }, a, 1e-4},
      {"relu", [=](const Tensor& x) { return weighted_sum(relu(x)); }, away, 1e-4},
      {"mean", [=](const Tensor& x) { return mean(mul(x, x)); }, a, 1e-4},
      {"softmax_rows", [=](const Tensor& x) { return weighted_sum(softmax(x, 1)); }, a, 1e-4},
      {"softmax_cols", [=](const Tensor& x) { return weighted_sum(softmax(x, 0)); }, a, 1e-4},
      {"layer_norm_x", [=](const Tensor& x) { return weighted_sum(layer_norm(x, g, bias)); }, a, 1e-6},
      {"layer_norm_gain", [=](const Tensor& x) { return weighted_sum(layer_norm(a, x, bias)); }, g, 1e-6},
      {"layer_norm_bias", [=](const Tensor& x) { return weighted_sum(layer_norm(a, g, x)); }, bias, 1e-6},
      {"cross_entropy", [=](const Tensor& x) { return cross_entropy(x, {1, kIgnoreIndex, 3}); }, a, 1e-6},
      {"embedding", [=](const Tensor& x) { return weighted_sum(embedding(x, {0, 5, 5, 2})); }, table, 1e-4},
      {"slice_rows", [=](const Tensor& x) { return weighted_sum(slice_rows(x, 1, 3)); }, a, 1e-4},
      {"concat_rows", [=](const Tensor& x) { return weighted_sum(concat_rows({x, c, x})); }, a, 1e-4},
      {"attention_q", [=](const Tensor& x) { return weighted_sum(nn::attention(x, k, v, m, 2)); }, q, 1e-4},
      {"attention_k", [=](const Tensor& x) { return weighted_sum(nn::attention(q, x, v, m, 2)); }, k, 1e-4},
      {"attention_v", [=](const Tensor& x) { return weighted_sum(nn::attention(q, k, x, m, 2)); }, v, 1e-4},
  };
}

}  // namespace bestow::testing
