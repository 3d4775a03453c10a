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

// Semantic-specific feature extraction: projection of brain tokens into the
// target embedding space, the bidirectional MixCo contrastive loss, and the
// semantic preservation anchor.

#pragma once

#include <optional>
#include <random>

#include <torch/torch.h>

#include "zsd/layers.hpp"

namespace zsd {

struct ContrastiveConfig {
  double temperature = 0.07;
  double mixco_alpha = 0.3;
  double mix_probability = 0.33;
  // Mixing is switched off for this trailing fraction of training.
  double mix_off_fraction = 1.0 / 3.0;

  void validate() const;
};

// Sample i of a mixed batch is lambda[i] * x[i] + (1 - lambda[i]) * x[perm[i]].
struct MixState {
  torch::Tensor perm;     // int64, B
  torch::Tensor lambdas;  // float, B; 1 for unmixed samples

  // B x B soft targets: lambda on the diagonal, 1 - lambda at (i, perm[i]).
  torch::Tensor soft_targets(torch::TensorOptions opts) const;
  // Convex combination of hard labels as B x K soft targets.
  torch::Tensor mix_labels(const torch::Tensor& labels, int64_t classes, torch::TensorOptions opts) const;
  // Mixes any B x ... tensor along the batch axis.
  torch::Tensor mix(const torch::Tensor& t) const;
};

MixState draw_mix(int64_t batch, const ContrastiveConfig& cfg, std::mt19937_64& rng);
// Identity mixing (lambda = 1 everywhere, perm = identity).
MixState no_mix(int64_t batch);

// Per-token projector C1 -> C2 (three linear layers, GELU).
class ProjectorImpl : public torch::nn::Module {
 public:
  ProjectorImpl(int64_t in, int64_t hidden, int64_t out);
  torch::Tensor forward(const torch::Tensor& tokens);

 private:
  int64_t in_, out_;
  Mlp3 mlp_{nullptr};
};
TORCH_MODULE(Projector);

// Text path: mean-pools tokens, then projects to a single C2 vector.
class TextProjectorImpl : public torch::nn::Module {
 public:
  TextProjectorImpl(int64_t in, int64_t hidden, int64_t out);
  torch::Tensor forward(const torch::Tensor& tokens);

 private:
  Mlp3 mlp_{nullptr};
};
TORCH_MODULE(TextProjector);

inline torch::Tensor project_semantic(Projector& p_s, const torch::Tensor& e_i) { return p_s->forward(e_i); }
inline torch::Tensor project_general(Projector& p, const torch::Tensor& e) { return p->forward(e); }
inline torch::Tensor project_text(TextProjector& p_t, const torch::Tensor& e) { return p_t->forward(e); }
// P_i(grl(E_s)).
torch::Tensor project_invariant(Projector& p_i, const torch::Tensor& e_s, double grl_scale);

// Tokens are mean-pooled and L2-normalized; accepts B x L x C or B x C.
// Throws ShapeError for B < 2 or temperature <= 0.
torch::Tensor bimixco_loss(const torch::Tensor& pred, const torch::Tensor& target, const ContrastiveConfig& cfg,
                           const std::optional<MixState>& mix = std::nullopt);

inline torch::Tensor loss_spe(const torch::Tensor& f_s, const torch::Tensor& f_y, const ContrastiveConfig& cfg,
                              const std::optional<MixState>& mix = std::nullopt) {
  return bimixco_loss(f_s, f_y, cfg, mix);
}

// The adversarial direction comes from the grl inside project_invariant.
inline torch::Tensor loss_inv(const torch::Tensor& f_i, const torch::Tensor& f_y, const ContrastiveConfig& cfg,
                              const std::optional<MixState>& mix = std::nullopt) {
  return bimixco_loss(f_i, f_y, cfg, mix);
}

struct SemanticAnchorLosses {
  torch::Tensor cls, clip_v, clip_t, sem;
};

// cls = CE(C(pool E), c); clip_v = bimixco(F, F_y); clip_t = bimixco(F^t, F_y^t).
// `classes` is int64 labels, or soft B x K targets for a mixed batch.
SemanticAnchorLosses semantic_anchor(torch::nn::Linear& classifier, const torch::Tensor& e, const torch::Tensor& f,
                                     const torch::Tensor& f_text, const torch::Tensor& f_y,
                                     const torch::Tensor& f_y_text, const torch::Tensor& classes,
                                     const ContrastiveConfig& cfg, const std::optional<MixState>& mix = std::nullopt);

}  // namespace zsd
