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

// Evaluation battery: low-level image metrics, feature identification,
// linear probes, and 2D projection export.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace zsd {

// Pearson correlation; NaN when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

struct PixcorrResult {
  double mean = 0.0;
  std::vector<double> per_pair;  // NaN for skipped pairs
  int64_t skipped = 0;
};

// Per-pair correlation over flattened pixels. Pairs with a constant image
// are skipped; throws std::domain_error if every pair is skipped.
PixcorrResult pixcorr(const torch::Tensor& pred, const torch::Tensor& target);

struct SsimResult {
  double mean = 0.0;
  std::vector<double> per_image;
};

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1, averaged over valid window positions.
// Images are B x H x W (or H x W). Throws ShapeError below 11 x 11.
SsimResult ssim(const torch::Tensor& pred, const torch::Tensor& target);
double ssim_image(std::span<const double> a, std::span<const double> b, int64_t height, int64_t width);

struct TwoWayResult {
  double fraction = 0.0;
  int64_t skipped_rows = 0;
};

// Mean over ordered pairs (i, j != i) of [corr(p_i, t_i) > corr(p_i, t_j)].
TwoWayResult two_way_identification(const torch::Tensor& pred, const torch::Tensor& truth);

struct ProbeOptions {
  int64_t iters = 1000;
  double l2 = 1e-3;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;  // majority-class frequency of the evaluated labels
  int64_t n_train = 0;
  int64_t n_test = 0;
};

// Fresh multinomial logistic regression (standardized inputs, L2) fit on
// one feature set and scored on another. Throws std::invalid_argument when
// the fit labels contain fewer than two classes.
ProbeResult linear_probe(const torch::Tensor& fit_features, const torch::Tensor& fit_labels,
                         const torch::Tensor& eval_features, const torch::Tensor& eval_labels,
                         const ProbeOptions& opts);

// Seeded random split of one feature set.
ProbeResult linear_probe(const torch::Tensor& features, const torch::Tensor& labels, const ProbeOptions& opts);

// Probe accuracy minus chance.
double mixing_score(const torch::Tensor& features, const torch::Tensor& subjects, const ProbeOptions& opts);

struct Projection {
  std::vector<std::array<double, 2>> coords;
  std::array<std::vector<double>, 2> components;
};

// Top-2 principal components of mean-centered rows. Identical rows map to
// the origin.
Projection pca2(const torch::Tensor& features);

// Writes `<out>.csv` (id,pc1,pc2,label) and `<out>.ppm` (scatter plot).
Projection projection_export(const torch::Tensor& features, const torch::Tensor& labels,
                             const std::filesystem::path& out);

// One-sided paired sign-flip test of mean(a - b) > 0.
double paired_permutation_pvalue(std::span<const double> a, std::span<const double> b, int64_t permutations,
                                 std::uint64_t seed);

// Percentile bootstrap interval (2.5, 97.5) of the mean.
std::array<double, 2> bootstrap_ci(std::span<const double> values, int64_t reps, std::uint64_t seed);

struct ProbeRecord {
  std::string target;  // "subject" or "class"
  ProbeResult result;
};

struct MetricsReport {
  int64_t subject = 0;
  double pixcorr = 0.0;
  double ssim = 0.0;
  double two_way_ident = 0.0;          // translated vs target embeddings
  double two_way_ident_decoder = 0.0;  // toy-decoder features of the same pair
  std::array<double, 2> pixcorr_ci{};
  std::array<double, 2> ssim_ci{};
  // Reconstruction vs the shuffled-pairing and subject-mean-image controls.
  double pixcorr_shuffled = 0.0;
  double pixcorr_mean_image = 0.0;
  double p_vs_shuffled = 1.0;
  double p_vs_mean_image = 1.0;
  std::map<std::string, ProbeRecord> probe_results;
  int64_t n_samples = 0;
  int64_t n_skipped = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static const std::vector<std::string>& keys();
};

}  // namespace zsd
