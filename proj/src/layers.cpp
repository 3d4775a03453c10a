// Copyright 2026 The zsdecode Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "zsd/layers.hpp"

#include <cmath>

#include "zsd/error.hpp"

namespace zsd {

namespace {

struct GradReverse : public torch::autograd::Function<GradReverse> {
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x, double scale) {
    ctx->saved_data["scale"] = scale;
    return x.view_as(x);
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grads) {
    double scale = ctx->saved_data["scale"].toDouble();
    return {grads[0] * -scale, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor grl(const torch::Tensor& t, double scale) {
  if (!(scale > 0.0)) throw ShapeError("grl scale must be > 0");
  return GradReverse::apply(t, scale);
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets) {
  if (targets.scalar_type() == torch::kInt64) {
    if (targets.numel() > 0) {
      auto lo = targets.min().item<int64_t>(), hi = targets.max().item<int64_t>();
      if (lo < 0 || hi >= logits.size(1))
        throw ShapeError("label out of range [0, " + std::to_string(logits.size(1)) + ")");
    }
    return torch::nn::functional::cross_entropy(logits, targets);
  }
  if (targets.sizes() != logits.sizes()) throw ShapeError("soft targets must match logits shape");
  return -(torch::log_softmax(logits, 1) * targets).sum(1).mean();
}

AttentionBlockImpl::AttentionBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) : heads_(heads) {
  if (dim % heads != 0) throw ShapeError("attention dim must be divisible by head count");
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), l = x.size(1), c = x.size(2), hd = c / heads_;
  auto qkv = qkv_(norm1_(x)).view({b, l, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(hd)), -1);
  auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({b, l, c});
  auto h = x + proj_(mixed);
  return h + fc2_(torch::gelu(fc1_(norm2_(h))));
}

Mlp3Impl::Mlp3Impl(int64_t in, int64_t hidden, int64_t out) {
  l1_ = register_module("l1", torch::nn::Linear(in, hidden));
  l2_ = register_module("l2", torch::nn::Linear(hidden, hidden));
  l3_ = register_module("l3", torch::nn::Linear(hidden, out));
}

torch::Tensor Mlp3Impl::forward(const torch::Tensor& x) {
  return l3_(torch::gelu(l2_(torch::gelu(l1_(x)))));
}

}  // namespace zsd
