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

// Training objective, optimization loop and the leave-one-subject-out
// evaluation protocol.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "zsd/config.hpp"
#include "zsd/metrics.hpp"
#include "zsd/model.hpp"

namespace zsd {

// Scalar values of every term, as logged.
struct LossBundle {
  double rec = 0, dis = 0, cls = 0, inv = 0, spe = 0, sem = 0, prior = 0, total = 0;

  static const std::vector<std::string>& term_names();  // rec .. prior
  double term(const std::string& name) const;
};

// Differentiable counterparts; undefined tensors are inactive terms.
struct LossTerms {
  torch::Tensor rec, dis, cls, inv, spe, sem, prior;
};

// Weighted sum of the six non-prior terms plus lambda * prior. Ablated terms
// contribute 0. Throws TrainingAbort naming the first non-finite term.
double total_loss(const LossBundle& parts, const TrainConfig& train, const AblationFlags& ablation);
torch::Tensor total_loss(const LossTerms& parts, const TrainConfig& train, const AblationFlags& ablation);
LossBundle to_bundle(const LossTerms& parts);

struct Batch {
  torch::Tensor x;         // B x H x W
  torch::Tensor y;         // B x H x W
  torch::Tensor f_y;       // B x L x C2
  torch::Tensor f_y_text;  // B x C2
  torch::Tensor subject;   // contiguous training-subject index, int64 B
  torch::Tensor label;     // class, int64 B
};

struct StepContext {
  std::optional<MixState> mix;
  double grl_scale = 1.0;
  std::uint64_t noise_seed = 0;
};

// One forward pass of every active loss family. Mixing (when present) is
// applied to the input maps; categorical targets and the prior target are
// mixed with the same coefficients.
LossTerms compute_losses(DecodingModel& model, const Batch& batch, const StepContext& ctx, const RunConfig& cfg);

struct StepRecord {
  int64_t step = 0;  // 1-based optimizer step
  int64_t epoch = 0;
  double lr = 0, beta1 = 0, grl_scale = 0, grad_norm = 0;
  bool mixed = false;
  LossBundle losses;
  double decoder = 0;  // toy-decoder loss (own optimizer)

  nlohmann::json to_json() const;
  static StepRecord from_json(const nlohmann::json& j);
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  // Stop after this optimizer step (and checkpoint it); -1 runs the whole schedule.
  int64_t stop_after = -1;
  bool quiet = true;
};

struct TrainResult {
  std::filesystem::path checkpoint;  // last checkpoint written
  std::vector<StepRecord> log;       // records produced by this call
  int64_t steps = 0;                 // optimizer steps completed overall
  int64_t total_steps = 0;
};

// Which subjects a run trains on, derived from the manifest and config.
std::vector<int64_t> training_subjects(const DatasetManifest& manifest, const TrainConfig& train);

// Writes <out>/metrics.jsonl, <out>/config.json + config.hash and
// <out>/checkpoints/{step_N,final}. A non-finite loss saves
// <out>/checkpoints/last_good and rethrows the TrainingAbort; a held-out
// subject in a batch throws ProtocolError.
TrainResult train(const std::filesystem::path& data_dir, const RunConfig& cfg, const std::filesystem::path& out_dir,
                  const TrainOptions& opts = {});

// Rebuilds the model stored in a checkpoint, with the config it was trained with.
struct LoadedModel {
  RunConfig config;
  DecodingModel model{nullptr};
  std::vector<int64_t> train_subjects;
  Checkpoint checkpoint;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

// Features for a list of sample ids, eval mode, batched.
struct SampleFeatures {
  FeatureSet features;
  torch::Tensor x, y, f_y, subject_id, label;
};
SampleFeatures features_for(LoadedModel& lm, const Dataset& data, const std::vector<int64_t>& sample_ids);

// Sample ids of one split restricted to a set of subjects.
std::vector<int64_t> split_samples(const DatasetManifest& m, const std::string& split,
                                   const std::vector<int64_t>& subjects);

// Token mean of a feature, N x C: E, E_i, E_s, F, F_s, F_i.
torch::Tensor feature_matrix(const FeatureSet& f, const std::string& name);
const std::vector<std::string>& feature_names();

struct EvalOptions {
  bool allow_seen_subject = false;  // identity sanity runs only
  bool with_probes = true;
};

// x -> E -> E_i -> F_s -> translate -> decode on the subject's test split.
// Throws ProtocolError when the subject was part of training (unless allowed).
MetricsReport zero_shot_eval(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& data_dir,
                             int64_t subject, const EvalOptions& opts = {});

// Probe of one feature for one target ("class" or "subject") under the
// evaluation protocol: class probes fit on training subjects and score on
// `subject`; subject probes split the training subjects' test samples.
ProbeResult probe_feature(LoadedModel& lm, const Dataset& data, int64_t subject, const std::string& feature,
                          const std::string& target);

}  // namespace zsd
