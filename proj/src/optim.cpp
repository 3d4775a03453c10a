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

#include "zsd/optim.hpp"

#include <cmath>
#include <numbers>

#include "zsd/error.hpp"

namespace zsd {

AdamW::AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  for (const auto& [_, p] : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
  lr_scale_.assign(params_.size(), 1.0);
}

void AdamW::set_lr_scale(const std::string& prefix, double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].first.rfind(prefix, 0) == 0) lr_scale_[i] = scale;
}

void AdamW::zero_grad() {
  for (auto& [_, p] : params_)
    if (p.grad().defined()) p.mutable_grad().zero_();
}

void AdamW::step(double lr, double beta1) {
  torch::NoGradGuard no_grad;
  ++steps_;
  // Bias correction uses the current beta1, as torch.optim.AdamW does under
  // momentum cycling.
  const double bc1 = 1.0 - std::pow(beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, double(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    const double rate = lr * lr_scale_[i];
    p.mul_(1.0 - rate * opts_.weight_decay);
    exp_avg_[i].mul_(beta1).add_(g, 1.0 - beta1);
    exp_avg_sq_[i].mul_(opts_.beta2).addcmul_(g, g, 1.0 - opts_.beta2);
    auto denom = (exp_avg_sq_[i] / bc2).sqrt_().add_(opts_.eps);
    p.addcdiv_(exp_avg_[i], denom, -rate / bc1);
  }
}

std::map<std::string, TensorBlob> AdamW::state_blobs(const std::string& prefix) const {
  std::map<std::string, TensorBlob> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& name = params_[i].first;
    out.emplace(prefix + "m." + name, TensorBlob::from_tensor(prefix + "m." + name, exp_avg_[i]));
    out.emplace(prefix + "v." + name, TensorBlob::from_tensor(prefix + "v." + name, exp_avg_sq_[i]));
  }
  auto n = prefix + "steps";
  out.emplace(n, TensorBlob::from_tensor(n, torch::tensor({steps_}, torch::kInt64)));
  return out;
}

void AdamW::load_state(const std::map<std::string, TensorBlob>& blobs, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto get = [&](const std::string& key) -> const TensorBlob& {
    auto it = blobs.find(key);
    if (it == blobs.end()) throw DataError("optimizer state missing '" + key + "'");
    return it->second;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& name = params_[i].first;
    exp_avg_[i].copy_(get(prefix + "m." + name).to_tensor().view(exp_avg_[i].sizes()));
    exp_avg_sq_[i].copy_(get(prefix + "v." + name).to_tensor().view(exp_avg_sq_[i].sizes()));
  }
  steps_ = get(prefix + "steps").to_tensor().item<int64_t>();
}

std::vector<torch::Tensor> AdamW::parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [_, p] : params_) out.push_back(p);
  return out;
}

namespace {

double cos_anneal(double start, double end, double pct) {
  return end + (start - end) / 2.0 * (std::cos(std::numbers::pi * pct) + 1.0);
}

}  // namespace

double OneCycle::lr(int64_t step) const {
  const double initial = max_lr / div_factor, final_lr = initial / final_div_factor;
  const double warm_end = pct_start * double(total_steps) - 1.0;
  const double end = double(total_steps) - 1.0;
  const double s = double(step);
  if (s <= warm_end) return cos_anneal(initial, max_lr, warm_end > 0.0 ? s / warm_end : 1.0);
  return cos_anneal(max_lr, final_lr, end > warm_end ? (s - warm_end) / (end - warm_end) : 1.0);
}

double OneCycle::beta1(int64_t step) const {
  const double warm_end = pct_start * double(total_steps) - 1.0;
  const double end = double(total_steps) - 1.0;
  const double s = double(step);
  if (s <= warm_end) return cos_anneal(max_momentum, base_momentum, warm_end > 0.0 ? s / warm_end : 1.0);
  return cos_anneal(base_momentum, max_momentum, end > warm_end ? (s - warm_end) / (end - warm_end) : 1.0);
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : params)
    if (p.grad().defined()) total += p.grad().pow(2).sum().item<double>();
  total = std::sqrt(total);
  if (total > max_norm) {
    double scale = max_norm / (total + 1e-6);
    for (const auto& p : params)
      if (p.grad().defined()) p.grad().mul_(scale);
  }
  return total;
}

}  // namespace zsd
