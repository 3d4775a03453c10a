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

// Run configuration: one JSON document with the sections data, model, train,
// contrastive, eval and ablation. Every key has a default, unknown keys are
// rejected, and the hash is the SHA-256 of the canonical serialization.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsd/model.hpp"
#include "zsd/ssfe.hpp"
#include "zsd/synthgen.hpp"

namespace zsd {

// Which loss families are active (the rows of the component ablation).
struct AblationFlags {
  bool sife_adv = true;     // L_dis^E and L_cls^E
  bool sife_anchor = true;  // L_rec
  bool ssfe_adv = true;     // L_inv^F
  bool ssfe_anchor = true;  // L_sem
};

// Relative weights of the six non-prior terms.
struct LossWeights {
  double rec = 1.0, dis = 1.0, cls = 1.0, inv = 1.0, spe = 1.0, sem = 1.0;
};

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 64;
  double lr = 1e-3;              // OneCycle peak
  double weight_decay = 0.01;
  double decoder_lr = 1e-3;
  double lambda_prior = 30.0;
  LossWeights weights;
  double grl_scale = 1.0;
  double grl_warmup = 0.1;       // fraction of steps for the linear ramp
  // Learning-rate multiplier for the two adversary heads (D_dis, P_i).
  double adversary_lr_scale = 1.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  int64_t held_out_subject = 1;
  // 0 means every subject except the held-out one; otherwise the first n of them.
  int64_t num_train_subjects = 0;
  int64_t checkpoint_every = 0;  // steps; 0 keeps only the final checkpoint
  bool deterministic = true;
};

struct EvalConfig {
  int64_t probe_fit_max = 1024;
  int64_t probe_iters = 1000;
  double probe_l2 = 1e-3;
  double probe_test_fraction = 0.3;
  int64_t bootstrap = 1000;
  int64_t permutations = 10000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  SynthConfig data;
  ModelConfig model;
  TrainConfig train;
  ContrastiveConfig contrastive;
  EvalConfig eval;
  AblationFlags ablation;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown sections or keys throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string canonical_string(const RunConfig& c);
std::string config_hash(const RunConfig& c);

// Applies "section.key=value" overrides (value parsed as JSON, falling back
// to a plain string).
void apply_override(RunConfig& c, const std::string& assignment);

// Writes config.json and config.hash into `dir`.
void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace zsd
