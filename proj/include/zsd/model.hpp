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

// The full decoding model: every trainable submodule under one parent, with
// names that match the checkpoint layout.

#pragma once

#include <map>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "zsd/encoder.hpp"
#include "zsd/prior.hpp"
#include "zsd/sife.hpp"
#include "zsd/ssfe.hpp"
#include "zsd/tensor_store.hpp"

namespace zsd {

struct ModelConfig {
  int64_t brain_dim = 64;
  int64_t heads = 4;
  int64_t encoder_depth = 4;
  int64_t invariant_depth = 2;
  int64_t projector_hidden = 64;
  int64_t head_hidden = 64;
  int64_t decoder_channels = 32;
  PriorConfig prior;
  // "F_s" conditions the prior on the invariant path, "F" on the general one.
  std::string prior_condition = "F_s";
};

struct ModelShape {
  ModelDims dims;
  int64_t classes = 0;
  int64_t train_subjects = 0;
};

class DecodingModelImpl : public torch::nn::Module {
 public:
  DecodingModelImpl(const ModelConfig& cfg, const ModelShape& shape);

  const ModelConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }

  BrainEncoder encoder{nullptr};
  InvariantExtractor inv_extractor{nullptr};
  SubjectHead d_dis{nullptr}, d_cls{nullptr};
  MaskedDecoder d_rec{nullptr};
  Projector p_s{nullptr}, p_i{nullptr}, p{nullptr};
  TextProjector p_t{nullptr};
  torch::nn::Linear classifier{nullptr};
  PriorNet prior{nullptr};
  ToyDecoder toy_decoder{nullptr};

  // Parameters of everything except the toy decoder (main optimizer).
  std::vector<torch::Tensor> main_parameters() const;
  std::vector<torch::Tensor> decoder_parameters() const;

 private:
  ModelConfig cfg_;
  ModelShape shape_;
};
TORCH_MODULE(DecodingModel);

// Features produced on the inference path and by the projection heads.
struct FeatureSet {
  torch::Tensor e, e_i, e_s;   // B x L x C1
  torch::Tensor f_s, f_i, f;   // B x L x C2
  torch::Tensor f_pred;        // translated embedding, B x L x C2
};

// Eval-mode pass x -> E -> (E_i, E_s) -> projections -> translate.
FeatureSet extract_features(DecodingModel& model, const torch::Tensor& x);

// Copies parameters (and buffers) into blobs keyed by "<submodule>.<path>".
std::map<std::string, TensorBlob> export_parameters(const torch::nn::Module& module);
// Throws DataError when a blob is missing or shaped differently.
void import_parameters(torch::nn::Module& module, const std::map<std::string, TensorBlob>& blobs);

}  // namespace zsd
