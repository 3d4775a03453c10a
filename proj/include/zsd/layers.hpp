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

// Building blocks shared by the encoder, the invariant extractor, the
// projectors and the prior.

#pragma once

#include <torch/torch.h>

namespace zsd {

// Gradient reversal: identity forward, gradient multiplied by -scale backward.
torch::Tensor grl(const torch::Tensor& t, double scale);

// Mean over the token axis of a B x L x C tensor.
inline torch::Tensor pool_tokens(const torch::Tensor& t) { return t.mean(1); }

// Cross-entropy against hard labels (int64, B) or soft targets (float, B x K).
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets);

// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)).
class AttentionBlockImpl : public torch::nn::Module {
 public:
  AttentionBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio = 2);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Three linear layers with GELU in between, applied over the last axis.
class Mlp3Impl : public torch::nn::Module {
 public:
  Mlp3Impl(int64_t in, int64_t hidden, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear l1_{nullptr}, l2_{nullptr}, l3_{nullptr};
};
TORCH_MODULE(Mlp3);

}  // namespace zsd
