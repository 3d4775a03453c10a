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

#include "zsd/model.hpp"

#include <cstring>

#include "zsd/error.hpp"

namespace zsd {

DecodingModelImpl::DecodingModelImpl(const ModelConfig& cfg, const ModelShape& shape) : cfg_(cfg), shape_(shape) {
  const auto& d = shape_.dims;
  d.validate();
  if (cfg_.prior_condition != "F_s" && cfg_.prior_condition != "F")
    throw ShapeError("prior_condition must be \"F_s\" or \"F\"");
  const int64_t c1 = d.brain_dim, c2 = d.embed_dim;
  const int64_t subjects = std::max<int64_t>(shape_.train_subjects, 1);
  encoder = register_module("encoder", BrainEncoder(d, cfg_.encoder_depth, cfg_.heads));
  inv_extractor = register_module("inv_extractor", InvariantExtractor(c1, cfg_.invariant_depth, cfg_.heads));
  d_dis = register_module("d_dis", SubjectHead(c1, cfg_.head_hidden, subjects));
  d_cls = register_module("d_cls", SubjectHead(c1, cfg_.head_hidden, subjects));
  d_rec = register_module("d_rec", MaskedDecoder(d));
  p_s = register_module("p_s", Projector(c1, cfg_.projector_hidden, c2));
  p_i = register_module("p_i", Projector(c1, cfg_.projector_hidden, c2));
  p = register_module("p", Projector(c1, cfg_.projector_hidden, c2));
  p_t = register_module("p_t", TextProjector(c1, cfg_.projector_hidden, c2));
  classifier = register_module("classifier", torch::nn::Linear(c1, shape_.classes));
  prior = register_module("prior", PriorNet(d.tokens(), c2, cfg_.prior));
  toy_decoder = register_module("toy_decoder", ToyDecoder(d.grid_h(), d.grid_w(), d.patch, c2, cfg_.decoder_channels));
}

std::vector<torch::Tensor> DecodingModelImpl::main_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters(/*recurse=*/true))
    if (item.key().rfind("toy_decoder.", 0) != 0) out.push_back(item.value());
  return out;
}

std::vector<torch::Tensor> DecodingModelImpl::decoder_parameters() const { return toy_decoder->parameters(); }

FeatureSet extract_features(DecodingModel& model, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  FeatureSet fs;
  fs.e = model->encoder->forward(x);
  auto dec = decompose(model->inv_extractor, fs.e);
  fs.e_i = dec.e_i;
  fs.e_s = dec.e_s;
  fs.f_s = project_semantic(model->p_s, fs.e_i);
  fs.f_i = model->p_i->forward(fs.e_s);
  fs.f = project_general(model->p, fs.e);
  fs.f_pred = translate(model->prior, model->config().prior_condition == "F" ? fs.f : fs.f_s);
  return fs;
}

std::map<std::string, TensorBlob> export_parameters(const torch::nn::Module& module) {
  std::map<std::string, TensorBlob> out;
  for (const auto& item : module.named_parameters(true)) out.emplace(item.key(), TensorBlob::from_tensor(item.key(), item.value()));
  for (const auto& item : module.named_buffers(true)) out.emplace(item.key(), TensorBlob::from_tensor(item.key(), item.value()));
  return out;
}

void import_parameters(torch::nn::Module& module, const std::map<std::string, TensorBlob>& blobs) {
  torch::NoGradGuard no_grad;
  auto load = [&](const std::string& name, torch::Tensor& t) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw DataError("checkpoint has no parameter '" + name + "'");
    auto src = it->second.to_tensor();
    if (src.sizes() != t.sizes() && !(t.dim() == 0 && src.numel() == 1))
      throw DataError("parameter '" + name + "' has a different shape in the checkpoint");
    t.copy_(src.view(t.sizes()).to(t.scalar_type()));
  };
  for (auto& item : module.named_parameters(true)) load(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) load(item.key(), item.value());
}

}  // namespace zsd
