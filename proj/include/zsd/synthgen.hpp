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

// Synthetic multi-subject brain maps with a known factorization.
//
// A sample is produced as
//
//   stimulus  y = render(class, style)
//   template  t = standardize(blur(y) + signature[class])   (same for all subjects)
//   brain map x = warp_s(t) * gain_s + bias_s + noise
//
// so the semantic content (class, style) and the subject operator s are
// separable by construction and every downstream disentanglement claim can
// be checked against ground truth.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "zsd/tensor_store.hpp"

namespace zsd {

struct Map2D {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Map2D() = default;
  Map2D(int h, int w, float fill = 0.0f) : height(h), width(w), data(std::size_t(h) * w, fill) {}

  float& at(int r, int c) { return data[std::size_t(r) * width + c]; }
  float at(int r, int c) const { return data[std::size_t(r) * width + c]; }
  // Bilinear lookup with clamped borders; integer coordinates are exact.
  float sample(float r, float c) const;
  double rms() const;

  bool operator==(const Map2D&) const = default;
};

struct SemanticFactor {
  int64_t class_id = 0;
  std::vector<float> style;
};

struct SubjectOperator {
  int64_t subject_id = 0;
  Map2D gain;      // > 0 everywhere
  Map2D shift_r;   // displacement in pixels, rows
  Map2D shift_c;   // displacement in pixels, columns
  Map2D bias;
  float noise_sigma = 0.0f;

  static SubjectOperator identity(int64_t subject_id, int h, int w);
  // Smallest det(I + grad d) over the pixel grid (central differences).
  double min_jacobian_det() const;
  float max_displacement() const;
};

struct SynthConfig {
  int subjects = 8;
  int classes = 8;
  int train_per_subject = 256;
  int test_shared = 64;
  int height = 64;
  int width = 64;
  int patch = 8;       // tokens L = (H/P)*(W/P)
  int embed_dim = 32;  // C2
  int style_dim = 4;
  std::uint64_t seed = 0;

  double gain_strength = 0.3;  // gain = exp(strength * field)
  double warp_pixels = 3.0;    // must stay <= width / 8
  double bias_strength = 0.5;
  double noise_sigma = 0.05;   // relative to unit template RMS

  int tokens() const { return (height / patch) * (width / patch); }
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Deterministic seed mixing (splitmix64 over the words).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);

// Everything frozen by the dataset seed: class signatures, target-embedding
// maps and subject operators.
class SynthWorld {
 public:
  explicit SynthWorld(SynthConfig cfg);

  const SynthConfig& config() const { return cfg_; }

  SemanticFactor draw_factor(int64_t class_id, std::mt19937_64& rng) const;
  Map2D render_stimulus(const SemanticFactor& f) const;
  Map2D neural_template(const SemanticFactor& f) const;
  const SubjectOperator& subject(int64_t subject_id) const;
  SubjectOperator make_operator(int64_t subject_id) const;

  // Row-normalized L x C2 vision target and unit-norm C2 text target.
  std::pair<std::vector<float>, std::vector<float>> target_embeddings(const SemanticFactor& f) const;

 private:
  SynthConfig cfg_;
  std::vector<Map2D> signatures_;
  std::vector<float> vision_map_;  // (L*C2) x (K + D)
  std::vector<float> text_map_;    // C2 x K
  std::vector<SubjectOperator> operators_;
};

// x = warp(t) * gain + bias + N(0, sigma^2); the rng is only touched when sigma > 0.
Map2D apply_subject(const Map2D& t, const SubjectOperator& op, std::mt19937_64& rng);

// Writes the dataset directory and returns its manifest. Subject ids are
// 1..S; splits are "train" and "test", test factors shared by all subjects.
DatasetManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out);

}  // namespace zsd
