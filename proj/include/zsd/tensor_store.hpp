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

// On-disk persistence for datasets and checkpoints.
//
// A dataset directory holds `manifest.json` plus `blobs/<name>.bin`; a
// checkpoint directory holds `meta.json` plus the same blob layout. Blob
// files are raw little-endian row-major bytes with no header: dtype and
// shape live in the JSON side table so the format can be read from any
// language with nothing but a JSON parser.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace zsd {

inline constexpr int kFormatVersion = 1;

enum class DType { f32, i64 };

std::string to_string(DType d);
DType dtype_from_string(const std::string& s);
std::size_t dtype_size(DType d);

struct TensorBlob {
  std::string name;
  DType dtype = DType::f32;
  std::vector<int64_t> shape;
  std::vector<std::uint8_t> data;

  int64_t numel() const;
  // Throws ValidationError when the byte length or rank is off.
  void validate() const;

  static TensorBlob from_tensor(std::string name, const torch::Tensor& t);
  // Copies into a freshly allocated tensor (f32 or i64).
  torch::Tensor to_tensor() const;

  bool operator==(const TensorBlob&) const = default;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

struct BlobInfo {
  std::string name;
  DType dtype = DType::f32;
  std::vector<int64_t> shape;
  std::string sha256;  // empty when unknown

  bool operator==(const BlobInfo&) const = default;
};

// A row of a stacked blob: sample i of field "x" is row i of blob "x".
struct BlobRef {
  std::string blob;
  int64_t row = 0;

  bool operator==(const BlobRef&) const = default;
};

// Ground truth behind one sample; enough to regenerate it bit for bit.
struct FactorRecord {
  int64_t class_id = 0;
  BlobRef style;
  std::uint64_t factor_seed = 0;
  std::uint64_t operator_seed = 0;

  bool operator==(const FactorRecord&) const = default;
};

struct SampleRecord {
  int64_t sample_id = 0;
  int64_t subject_id = 0;
  int64_t class_id = 0;
  BlobRef x, y, f_y, f_y_text;
  FactorRecord factor;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  std::vector<int64_t> subjects;
  int64_t classes = 0;
  std::vector<SampleRecord> samples;
  std::map<std::string, std::vector<int64_t>> splits;
  std::vector<BlobInfo> blobs;
  nlohmann::json generator = nlohmann::json::object();

  const BlobInfo* find_blob(const std::string& name) const;
  // Checks every invariant that can be checked without touching the disk.
  void validate() const;

  bool operator==(const DatasetManifest&) const = default;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Lazy, thread-safe reader over a dataset's blob directory.
class BlobAccessor {
 public:
  BlobAccessor() = default;
  BlobAccessor(std::filesystem::path blob_dir, std::vector<BlobInfo> table);

  bool contains(const std::string& name) const;
  std::size_t size() const { return table_.size(); }
  std::vector<std::string> names() const;
  const TensorBlob& blob(const std::string& name) const;
  torch::Tensor tensor(const std::string& name) const { return blob(name).to_tensor(); }

 private:
  std::filesystem::path dir_;
  std::map<std::string, BlobInfo> table_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const TensorBlob>> cache_;
};

// Writes manifest.json + blobs/*.bin. The manifest's blob table is rebuilt
// from `blobs` (with hashes); refs that don't resolve are a ValidationError.
void write_dataset(DatasetManifest manifest, const std::vector<TensorBlob>& blobs,
                   const std::filesystem::path& dir);

struct Dataset {
  DatasetManifest manifest;
  std::shared_ptr<BlobAccessor> blobs;
};

Dataset read_dataset(const std::filesystem::path& dir);

inline const std::vector<std::string>& checkpoint_submodules() {
  static const std::vector<std::string> names = {
      "encoder", "inv_extractor", "d_dis", "d_cls",      "d_rec", "p_s",
      "p_i",     "p",             "p_t",   "classifier", "prior", "toy_decoder"};
  return names;
}

struct Checkpoint {
  int64_t step = 0;
  std::string config_hash;
  std::string rng_state;
  // Parameter names are "<submodule>.<path>"; the submodule is the prefix.
  std::map<std::string, TensorBlob> params;
  std::map<std::string, TensorBlob> optimizer;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const Checkpoint&) const = default;
};

struct CheckpointLoadOptions {
  std::vector<std::string> required_submodules = checkpoint_submodules();
  std::optional<std::string> expected_config_hash;
  // A hash mismatch is reported on stderr instead of throwing.
  bool allow_hash_mismatch = false;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const CheckpointLoadOptions& opts = {});

}  // namespace zsd
