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

#include "zsd/ssfe.hpp"

#include <numeric>

#include "zsd/error.hpp"

namespace zsd {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ShapeError("contrastive temperature must be > 0");
  if (!(mixco_alpha > 0.0)) throw ShapeError("mixco_alpha must be > 0");
  if (!(mix_probability >= 0.0 && mix_probability <= 1.0)) throw ShapeError("mix_probability must lie in [0, 1]");
  if (!(mix_off_fraction >= 0.0 && mix_off_fraction <= 1.0)) throw ShapeError("mix_off_fraction must lie in [0, 1]");
}

torch::Tensor MixState::soft_targets(torch::TensorOptions opts) const {
  const auto b = perm.size(0);
  auto lam = lambdas.to(opts);
  auto targets = torch::diag(lam);
  auto rows = torch::arange(b, torch::kInt64);
  return targets.index_put_({rows, perm}, 1.0 - lam, /*accumulate=*/true);
}

torch::Tensor MixState::mix_labels(const torch::Tensor& labels, int64_t classes, torch::TensorOptions opts) const {
  auto onehot = torch::nn::functional::one_hot(labels, classes).to(opts);
  auto lam = lambdas.to(opts).unsqueeze(1);
  return lam * onehot + (1.0 - lam) * onehot.index_select(0, perm);
}

torch::Tensor MixState::mix(const torch::Tensor& t) const {
  std::vector<int64_t> shape(std::size_t(t.dim()), 1);
  shape[0] = t.size(0);
  auto lam = lambdas.to(t.options()).view(shape);
  return lam * t + (1.0 - lam) * t.index_select(0, perm);
}

MixState draw_mix(int64_t batch, const ContrastiveConfig& cfg, std::mt19937_64& rng) {
  std::vector<int64_t> perm(static_cast<std::size_t>(batch));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::gamma_distribution<double> gamma(cfg.mixco_alpha, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<float> lam(std::size_t(batch), 1.0f);
  for (auto& l : lam) {
    double ga = gamma(rng), gb = gamma(rng);
    bool selected = coin(rng) < cfg.mix_probability;
    double beta = (ga + gb) > 0.0 ? ga / (ga + gb) : 0.5;
    if (selected) l = float(beta);
  }
  return {torch::tensor(perm, torch::kInt64), torch::tensor(lam, torch::kFloat32)};
}

MixState no_mix(int64_t batch) {
  return {torch::arange(batch, torch::kInt64), torch::ones({batch}, torch::kFloat32)};
}

ProjectorImpl::ProjectorImpl(int64_t in, int64_t hidden, int64_t out) : in_(in), out_(out) {
  mlp_ = register_module("mlp", Mlp3(in, hidden, out));
}

torch::Tensor ProjectorImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(2) != in_) throw ShapeError("projector expects B x L x C1");
  return mlp_->forward(tokens);
}

TextProjectorImpl::TextProjectorImpl(int64_t in, int64_t hidden, int64_t out) {
  mlp_ = register_module("mlp", Mlp3(in, hidden, out));
}

torch::Tensor TextProjectorImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3) throw ShapeError("text projector expects B x L x C1");
  return mlp_->forward(pool_tokens(tokens));
}

torch::Tensor project_invariant(Projector& p_i, const torch::Tensor& e_s, double grl_scale) {
  return p_i->forward(grl(e_s, grl_scale));
}

torch::Tensor bimixco_loss(const torch::Tensor& pred, const torch::Tensor& target, const ContrastiveConfig& cfg,
                           const std::optional<MixState>& mix) {
  if (pred.sizes() != target.sizes()) throw ShapeError("bimixco_loss: pred and target shapes differ");
  if (pred.dim() != 2 && pred.dim() != 3) throw ShapeError("bimixco_loss expects B x C or B x L x C");
  if (pred.size(0) < 2) throw ShapeError("bimixco_loss needs a batch of at least 2");
  if (!(cfg.temperature > 0.0)) throw ShapeError("bimixco_loss temperature must be > 0");
  namespace F = torch::nn::functional;
  auto p = pred.dim() == 3 ? pool_tokens(pred) : pred;
  auto t = target.dim() == 3 ? pool_tokens(target) : target;
  p = F::normalize(p, F::NormalizeFuncOptions().dim(1));
  t = F::normalize(t, F::NormalizeFuncOptions().dim(1));
  auto sim = torch::matmul(p, t.t()) / cfg.temperature;
  const auto b = pred.size(0);
  torch::Tensor labels = mix ? mix->soft_targets(sim.options()) : torch::eye(b, sim.options());
  auto forward_ce = -(torch::log_softmax(sim, 1) * labels).sum(1).mean();
  auto backward_ce = -(torch::log_softmax(sim.t(), 1) * labels.t()).sum(1).mean();
  return 0.5 * (forward_ce + backward_ce);
}

SemanticAnchorLosses semantic_anchor(torch::nn::Linear& classifier, const torch::Tensor& e, const torch::Tensor& f,
                                     const torch::Tensor& f_text, const torch::Tensor& f_y,
                                     const torch::Tensor& f_y_text, const torch::Tensor& classes,
                                     const ContrastiveConfig& cfg, const std::optional<MixState>& mix) {
  SemanticAnchorLosses out;
  out.cls = cross_entropy(classifier->forward(pool_tokens(e)), classes);
  out.clip_v = bimixco_loss(f, f_y, cfg, mix);
  out.clip_t = bimixco_loss(f_text, f_y_text, cfg, mix);
  out.sem = out.cls + out.clip_v + out.clip_t;
  return out;
}

}  // namespace zsd
