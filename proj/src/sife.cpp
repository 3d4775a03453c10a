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

#include "zsd/sife.hpp"

#include "zsd/error.hpp"

namespace zsd {

InvariantExtractorImpl::InvariantExtractorImpl(int64_t dim, int64_t depth, int64_t heads) : dim_(dim) {
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < depth; ++i) blocks_->push_back(AttentionBlock(dim, heads));
}

torch::Tensor InvariantExtractorImpl::forward(const torch::Tensor& e) {
  if (e.dim() != 3 || e.size(2) != dim_) throw ShapeError("extract_invariant expects B x L x C1");
  auto h = e;
  for (const auto& blk : *blocks_) h = blk->as<AttentionBlock>()->forward(h);
  return h;
}

LatentDecomposition decompose(InvariantExtractor& extractor, const torch::Tensor& e) {
  auto e_i = extractor->forward(e);
  return {e, e_i, e - e_i};
}

SubjectHeadImpl::SubjectHeadImpl(int64_t dim, int64_t hidden, int64_t subjects) : dim_(dim), subjects_(subjects) {
  norm_ = register_module("norm", torch::nn::BatchNorm1d(dim));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, subjects));
}

torch::Tensor SubjectHeadImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(2) != dim_) throw ShapeError("subject head expects B x L x C");
  return fc2_(torch::gelu(fc1_(norm_(tokens.mean(1)))));
}

torch::Tensor loss_dis(SubjectHead& d_dis, const torch::Tensor& e_i, const torch::Tensor& subjects,
                       double grl_scale) {
  if (d_dis->subjects() < 2) return torch::zeros({}, e_i.options());
  return cross_entropy(d_dis->forward(grl(e_i, grl_scale)), subjects);
}

torch::Tensor loss_cls(SubjectHead& d_cls, const torch::Tensor& e_s, const torch::Tensor& subjects) {
  if (d_cls->subjects() < 2) return torch::zeros({}, e_s.options());
  return cross_entropy(d_cls->forward(e_s.detach()), subjects);
}

}  // namespace zsd
