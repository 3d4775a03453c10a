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

// Embedding prior (brain embedding -> stimulus embedding) and the toy image
// decoder used in place of a pretrained generator.

#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace zsd {

struct PriorConfig {
  // false: plain regression  eps(F) ~ F_y.
  // true:  the target is noised at a random timestep and eps predicts it clean.
  bool noise_conditioned = false;
  int64_t steps = 20;
  int64_t hidden = 128;
  int64_t depth = 2;
};

// Token-wise residual MLP. Each token sees its own conditioning row, the
// pooled conditioning, a learned position and (noise mode) the noised target
// row plus a timestep embedding.
class PriorNetImpl : public torch::nn::Module {
 public:
  PriorNetImpl(int64_t tokens, int64_t embed_dim, PriorConfig cfg);

  // cond: B x L x C2. noised/t are only read in noise-conditioned mode.
  torch::Tensor forward(const torch::Tensor& cond, const torch::Tensor& noised = {},
                        const torch::Tensor& timestep = {});
  const PriorConfig& config() const { return cfg_; }
  int64_t tokens() const { return tokens_; }
  int64_t embed_dim() const { return embed_dim_; }

 private:
  torch::Tensor time_features(const torch::Tensor& timestep, int64_t batch) const;

  int64_t tokens_, embed_dim_;
  PriorConfig cfg_;
  torch::nn::Linear in_{nullptr}, out_{nullptr};
  torch::Tensor pos_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(PriorNet);

// Cumulative signal fraction at timestep t in [0, steps] (cosine schedule).
double alpha_bar(int64_t t, int64_t steps);

// MSE between the prior's prediction from `cond` and `target`. In noise mode
// the timestep and noise are drawn from a generator seeded with `noise_seed`.
torch::Tensor loss_prior(PriorNet& prior, const torch::Tensor& cond, const torch::Tensor& target,
                         std::uint64_t noise_seed = 0);

// MSE between two same-shaped tensors; the shared reduction of loss_prior.
torch::Tensor mse(const torch::Tensor& pred, const torch::Tensor& target);

// Eval-mode prediction. Noise mode runs a deterministic DDIM loop from a
// fixed-seed start.
torch::Tensor translate(PriorNet& prior, const torch::Tensor& cond, std::uint64_t seed = 0);

// Embedding grid -> H x W image. Trained by plain regression on pixel
// values (a sigmoid output saturates on mostly-dark stimuli); decode_image
// clamps to [0, 1].
class ToyDecoderImpl : public torch::nn::Module {
 public:
  ToyDecoderImpl(int64_t grid_h, int64_t grid_w, int64_t patch, int64_t embed_dim, int64_t channels = 32);

  // emb: B x L x C2 -> B x H x W
  torch::Tensor forward(const torch::Tensor& emb);
  // Mid-level activations (B x D) used for feature-space identification.
  torch::Tensor features(const torch::Tensor& emb);

 private:
  torch::Tensor stem(const torch::Tensor& emb);

  int64_t grid_h_, grid_w_, embed_dim_, channels_;
  torch::nn::Linear token_in_{nullptr}, global_in_{nullptr};
  torch::nn::Conv2d mix_{nullptr}, head_{nullptr};
  torch::nn::ModuleList ups_;
};
TORCH_MODULE(ToyDecoder);

torch::Tensor decode_image(ToyDecoder& decoder, const torch::Tensor& emb);

}  // namespace zsd
