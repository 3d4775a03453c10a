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

#include "zsd/encoder.hpp"

#include "zsd/error.hpp"

namespace zsd {

void ModelDims::validate() const {
  if (height <= 0 || width <= 0 || patch <= 0 || brain_dim <= 0 || embed_dim <= 0)
    throw ShapeError("model dims must be positive");
  if (height % patch || width % patch) throw ShapeError("patch size must divide height and width");
  if (patch % 4) throw ShapeError("patch size must be a multiple of 4");
  if (brain_dim % 4) throw ShapeError("brain_dim must be a multiple of 4");
}

BrainEncoderImpl::BrainEncoderImpl(ModelDims dims, int64_t depth, int64_t heads) : dims_(dims) {
  dims_.validate();
  patch_embed_ = register_module("patch_embed", torch::nn::Linear(dims_.patch * dims_.patch, dims_.brain_dim));
  pos_ = register_parameter("pos", torch::randn({dims_.tokens(), dims_.brain_dim}) * 0.02);
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < depth; ++i) blocks_->push_back(AttentionBlock(dims_.brain_dim, heads));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dims_.brain_dim})));
}

torch::Tensor BrainEncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 3 || x.size(1) != dims_.height || x.size(2) != dims_.width)
    throw ShapeError("encode expects B x " + std::to_string(dims_.height) + " x " + std::to_string(dims_.width));
  const auto b = x.size(0), p = dims_.patch, gh = dims_.grid_h(), gw = dims_.grid_w();
  auto patches = x.reshape({b, gh, p, gw, p}).permute({0, 1, 3, 2, 4}).reshape({b, gh * gw, p * p});
  auto h = patch_embed_(patches) + pos_;
  for (const auto& blk : *blocks_) h = blk->as<AttentionBlock>()->forward(h);
  return norm_(h);
}

MaskedDecoderImpl::MaskedDecoderImpl(ModelDims dims) : dims_(dims) {
  dims_.validate();
  const auto c = dims_.brain_dim, r = dims_.patch / 4;
  up1_ = register_module("up1", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(c, c / 2, 2).stride(2)));
  up2_ = register_module("up2",
                         torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(c / 2, c / 4, 2).stride(2)));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c / 4, r * r, 1)));
}

torch::Tensor MaskedDecoderImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(1) != dims_.tokens() || tokens.size(2) != dims_.brain_dim)
    throw ShapeError("reconstruct expects B x L x C1 tokens");
  const auto b = tokens.size(0);
  auto grid = tokens.transpose(1, 2).reshape({b, dims_.brain_dim, dims_.grid_h(), dims_.grid_w()});
  auto h = torch::gelu(up1_(grid));
  h = torch::gelu(up2_(h));
  h = head_(h);
  const auto r = dims_.patch / 4;
  if (r > 1) h = torch::pixel_shuffle(h, r);
  return h.squeeze(1);
}

torch::Tensor loss_rec(const torch::Tensor& x, const torch::Tensor& x_hat) {
  if (x.sizes() != x_hat.sizes()) throw ShapeError("loss_rec shape mismatch");
  return (x_hat - x).abs().mean();
}

}  // namespace zsd
