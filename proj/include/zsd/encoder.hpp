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

#pragma once

#include <torch/torch.h>

#include "zsd/layers.hpp"

namespace zsd {

struct ModelDims {
  int64_t height = 64;
  int64_t width = 64;
  int64_t patch = 8;
  int64_t brain_dim = 64;   // C1
  int64_t embed_dim = 32;   // C2

  int64_t grid_h() const { return height / patch; }
  int64_t grid_w() const { return width / patch; }
  int64_t tokens() const { return grid_h() * grid_w(); }
  // Throws ShapeError. The reconstruction decoder upsamples twice by 2, so
  // the patch size must be a multiple of 4.
  void validate() const;
};

// Patch embedding + learned positions + pre-norm attention blocks.
class BrainEncoderImpl : public torch::nn::Module {
 public:
  BrainEncoderImpl(ModelDims dims, int64_t depth, int64_t heads);
  // x: B x H x W  ->  E: B x L x C1
  torch::Tensor forward(const torch::Tensor& x);
  const ModelDims& dims() const { return dims_; }

 private:
  ModelDims dims_;
  torch::nn::Linear patch_embed_{nullptr};
  torch::Tensor pos_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(BrainEncoder);

// Reconstruction decoder: two stride-2 transposed convolutions, then a
// per-position linear head whose outputs are shuffled into pixels.
class MaskedDecoderImpl : public torch::nn::Module {
 public:
  explicit MaskedDecoderImpl(ModelDims dims);
  // E: B x L x C1  ->  x_hat: B x H x W
  torch::Tensor forward(const torch::Tensor& tokens);

 private:
  ModelDims dims_;
  torch::nn::ConvTranspose2d up1_{nullptr}, up2_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(MaskedDecoder);

// Mean absolute error over every element.
torch::Tensor loss_rec(const torch::Tensor& x, const torch::Tensor& x_hat);

}  // namespace zsd
