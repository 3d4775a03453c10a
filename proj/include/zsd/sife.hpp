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

// Subject-invariant feature extraction.
//
// Encoder tokens E are split into an invariant part E_i = F_i(E) and the
// residual E_s = E - E_i. A subject discriminator sees E_i through a gradient
// reversal layer, so one backward pass trains the discriminator to identify
// the subject while pushing the extractor and encoder to hide it. A second
// classifier learns to identify the subject from a detached E_s.

#pragma once

#include <torch/torch.h>

#include "zsd/layers.hpp"

namespace zsd {

struct LatentDecomposition {
  torch::Tensor e;    // B x L x C1
  torch::Tensor e_i;  // invariant
  torch::Tensor e_s;  // specific, e - e_i
};

class InvariantExtractorImpl : public torch::nn::Module {
 public:
  InvariantExtractorImpl(int64_t dim, int64_t depth, int64_t heads);
  torch::Tensor forward(const torch::Tensor& e);

 private:
  int64_t dim_;
  torch::nn::ModuleList blocks_;
};
TORCH_MODULE(InvariantExtractor);

LatentDecomposition decompose(InvariantExtractor& extractor, const torch::Tensor& e);

// Mean over tokens, per-feature batch standardization, then a two-layer
// classifier to subject logits. Subject offsets are small next to the
// semantic spread of pooled tokens; without the standardization the heads
// stay at chance long after a linear probe separates the subjects.
class SubjectHeadImpl : public torch::nn::Module {
 public:
  SubjectHeadImpl(int64_t dim, int64_t hidden, int64_t subjects);
  torch::Tensor forward(const torch::Tensor& tokens);
  int64_t subjects() const { return subjects_; }

 private:
  int64_t dim_, subjects_;
  torch::nn::BatchNorm1d norm_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(SubjectHead);

// Cross-entropy of D_dis on grl(E_i). `subjects` holds contiguous training
// subject indices (int64) or soft targets (B x S). Zero when S_train == 1.
torch::Tensor loss_dis(SubjectHead& d_dis, const torch::Tensor& e_i, const torch::Tensor& subjects,
                       double grl_scale);

// Cross-entropy of D_cls on a detached E_s; gradients reach D_cls only.
torch::Tensor loss_cls(SubjectHead& d_cls, const torch::Tensor& e_s, const torch::Tensor& subjects);

}  // namespace zsd
