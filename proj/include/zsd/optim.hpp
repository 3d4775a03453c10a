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

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "zsd/tensor_store.hpp"

namespace zsd {

// AdamW with decoupled weight decay. State is plain tensors so that it can
// be written into a checkpoint and restored bit for bit.
class AdamW {
 public:
  struct Options {
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, Options opts);

  void zero_grad();
  // One update with the given learning rate and first-moment coefficient.
  void step(double lr, double beta1);
  int64_t steps() const { return steps_; }
  // Multiplies the learning rate of every parameter whose name starts with `prefix`.
  void set_lr_scale(const std::string& prefix, double scale);

  std::map<std::string, TensorBlob> state_blobs(const std::string& prefix) const;
  void load_state(const std::map<std::string, TensorBlob>& blobs, const std::string& prefix);

  std::vector<torch::Tensor> parameters() const;

 private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::vector<torch::Tensor> exp_avg_, exp_avg_sq_;
  std::vector<double> lr_scale_;
  Options opts_;
  int64_t steps_ = 0;
};

// One-cycle schedule: cosine warm-up from max_lr/div to max_lr over the
// first pct_start of steps, then cosine decay to max_lr/(div*final_div).
// beta1 cycles inversely between max_momentum and base_momentum.
struct OneCycle {
  double max_lr = 1e-4;
  int64_t total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  double base_momentum = 0.85;
  double max_momentum = 0.95;

  double lr(int64_t step) const;
  double beta1(int64_t step) const;
};

// Global L2 norm clipping; returns the pre-clip norm.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

}  // namespace zsd
