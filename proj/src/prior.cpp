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

#include "zsd/prior.hpp"

#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

#include "zsd/error.hpp"
#include "zsd/layers.hpp"

namespace zsd {

namespace {

constexpr int64_t kTimeFeatures = 16;

class ResidualMlpImpl : public torch::nn::Module {
 public:
  explicit ResidualMlpImpl(int64_t dim) {
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    fc1_ = register_module("fc1", torch::nn::Linear(dim, dim));
    fc2_ = register_module("fc2", torch::nn::Linear(dim, dim));
  }
  torch::Tensor forward(const torch::Tensor& x) { return x + fc2_(torch::gelu(fc1_(norm_(x)))); }

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ResidualMlp);

}  // namespace

PriorNetImpl::PriorNetImpl(int64_t tokens, int64_t embed_dim, PriorConfig cfg)
    : tokens_(tokens), embed_dim_(embed_dim), cfg_(cfg) {
  if (cfg_.steps < 1) throw ShapeError("prior steps must be >= 1");
  int64_t in_dim = 2 * embed_dim + (cfg_.noise_conditioned ? embed_dim + kTimeFeatures : 0);
  in_ = register_module("in", torch::nn::Linear(in_dim, cfg_.hidden));
  pos_ = register_parameter("pos", torch::randn({tokens, cfg_.hidden}) * 0.02);
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg_.depth; ++i) blocks_->push_back(ResidualMlp(cfg_.hidden));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.hidden})));
  out_ = register_module("out", torch::nn::Linear(cfg_.hidden, embed_dim));
}

torch::Tensor PriorNetImpl::time_features(const torch::Tensor& timestep, int64_t batch) const {
  auto t = timestep.to(pos_.options()).view({batch, 1}) / double(cfg_.steps);
  auto freqs = torch::pow(2.0, torch::arange(kTimeFeatures / 2, pos_.options())) * std::numbers::pi;
  auto ang = t * freqs.view({1, -1});
  return torch::cat({torch::sin(ang), torch::cos(ang)}, 1);
}

torch::Tensor PriorNetImpl::forward(const torch::Tensor& cond, const torch::Tensor& noised,
                                    const torch::Tensor& timestep) {
  if (cond.dim() != 3 || cond.size(1) != tokens_ || cond.size(2) != embed_dim_)
    throw ShapeError("prior expects B x L x C2 conditioning");
  const auto b = cond.size(0);
  std::vector<torch::Tensor> parts = {cond, pool_tokens(cond).unsqueeze(1).expand({b, tokens_, embed_dim_})};
  if (cfg_.noise_conditioned) {
    if (!noised.defined() || !timestep.defined()) throw ShapeError("noise-conditioned prior needs noised target and t");
    if (noised.sizes() != cond.sizes()) throw ShapeError("noised target shape differs from conditioning");
    parts.push_back(noised);
    parts.push_back(time_features(timestep, b).unsqueeze(1).expand({b, tokens_, kTimeFeatures}));
  }
  auto h = in_(torch::cat(parts, 2)) + pos_;
  for (const auto& blk : *blocks_) h = blk->as<ResidualMlp>()->forward(h);
  return out_(norm_(h));
}

double alpha_bar(int64_t t, int64_t steps) {
  constexpr double s = 0.008;
  auto f = [&](double u) {
    double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  return std::max(f(double(t) / double(steps)) / f(0.0), 1e-5);
}

torch::Tensor mse(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw ShapeError("mse shape mismatch");
  return (pred - target).pow(2).mean();
}

torch::Tensor loss_prior(PriorNet& prior, const torch::Tensor& cond, const torch::Tensor& target,
                         std::uint64_t noise_seed) {
  if (cond.sizes() != target.sizes()) throw ShapeError("loss_prior shape mismatch");
  const auto& cfg = prior->config();
  if (!cfg.noise_conditioned) return mse(prior->forward(cond), target);

  auto gen = at::detail::createCPUGenerator(noise_seed);
  const auto b = cond.size(0);
  auto t = torch::randint(1, cfg.steps + 1, {b}, gen, torch::kInt64);
  std::vector<double> ab(static_cast<std::size_t>(b));
  auto ta = t.accessor<int64_t, 1>();
  for (int64_t i = 0; i < b; ++i) ab[std::size_t(i)] = alpha_bar(ta[i], cfg.steps);
  auto abt = torch::tensor(ab, torch::kFloat64).to(target.scalar_type()).view({b, 1, 1});
  auto eps = torch::randn(target.sizes(), gen, torch::kFloat32).to(target.scalar_type());
  auto noised = torch::sqrt(abt) * target.detach() + torch::sqrt(1.0 - abt) * eps;
  return mse(prior->forward(cond, noised, t), target);
}

torch::Tensor translate(PriorNet& prior, const torch::Tensor& cond, std::uint64_t seed) {
  const auto& cfg = prior->config();
  if (!cfg.noise_conditioned) return prior->forward(cond);
  auto gen = at::detail::createCPUGenerator(seed);
  const auto b = cond.size(0);
  auto z = torch::randn(cond.sizes(), gen, torch::kFloat32).to(cond.scalar_type());
  torch::Tensor x0;
  for (int64_t t = cfg.steps; t >= 1; --t) {
    auto tt = torch::full({b}, t, torch::kInt64);
    x0 = prior->forward(cond, z, tt);
    if (t > 1) {
      double ab = alpha_bar(t, cfg.steps), ab_prev = alpha_bar(t - 1, cfg.steps);
      auto eps = (z - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
      z = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
    }
  }
  return x0;
}

ToyDecoderImpl::ToyDecoderImpl(int64_t grid_h, int64_t grid_w, int64_t patch, int64_t embed_dim, int64_t channels)
    : grid_h_(grid_h), grid_w_(grid_w), embed_dim_(embed_dim), channels_(channels) {
  if (patch < 1 || (patch & (patch - 1)) != 0) throw ShapeError("toy decoder needs a power-of-two patch size");
  token_in_ = register_module("token_in", torch::nn::Linear(embed_dim, channels));
  global_in_ = register_module("global_in", torch::nn::Linear(grid_h * grid_w * embed_dim, channels));
  mix_ = register_module("mix", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  ups_ = register_module("ups", torch::nn::ModuleList());
  int64_t ch = channels;
  for (int64_t f = patch; f > 1; f /= 2) {
    int64_t next = std::max<int64_t>(ch / 2, 8);
    ups_->push_back(torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(ch, next, 4).stride(2).padding(1)));
    ch = next;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 3).padding(1)));
}

torch::Tensor ToyDecoderImpl::stem(const torch::Tensor& emb) {
  if (emb.dim() != 3 || emb.size(1) != grid_h_ * grid_w_ || emb.size(2) != embed_dim_)
    throw ShapeError("toy decoder expects B x L x C2");
  const auto b = emb.size(0);
  auto h = token_in_(emb) + global_in_(emb.reshape({b, -1})).unsqueeze(1);
  h = torch::gelu(h).transpose(1, 2).reshape({b, channels_, grid_h_, grid_w_});
  return torch::gelu(mix_(h));
}

torch::Tensor ToyDecoderImpl::features(const torch::Tensor& emb) { return stem(emb).flatten(1); }

torch::Tensor ToyDecoderImpl::forward(const torch::Tensor& emb) {
  auto h = stem(emb);
  for (const auto& up : *ups_) h = torch::gelu(up->as<torch::nn::ConvTranspose2d>()->forward(h));
  return head_(h).squeeze(1);
}

torch::Tensor decode_image(ToyDecoder& decoder, const torch::Tensor& emb) { return decoder->forward(emb).clamp(0.0, 1.0); }

}  // namespace zsd
