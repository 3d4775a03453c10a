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

#include "zsd/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "zsd/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "blob files are written in host byte order");

namespace zsd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "i64"; }

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "i64") return DType::i64;
  throw ValidationError("dtype", "unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

int64_t TensorBlob::numel() const {
  int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void TensorBlob::validate() const {
  if (name.empty()) throw ValidationError("name", "blob name is empty");
  if (shape.empty() || shape.size() > 4)
    throw ValidationError(name + ".shape", "rank must be 1..4, got " + std::to_string(shape.size()));
  for (auto s : shape)
    if (s <= 0) throw ValidationError(name + ".shape", "dimensions must be positive");
  auto want = static_cast<std::size_t>(numel()) * dtype_size(dtype);
  if (data.size() != want)
    throw ValidationError(name + ".data", "byte length " + std::to_string(data.size()) +
                                              " != " + std::to_string(want));
}

TensorBlob TensorBlob::from_tensor(std::string name, const torch::Tensor& t) {
  TensorBlob b;
  b.name = std::move(name);
  torch::Tensor c;
  if (t.scalar_type() == torch::kInt64 || t.scalar_type() == torch::kInt32) {
    b.dtype = DType::i64;
    c = t.detach().to(torch::kCPU, torch::kInt64).contiguous();
  } else {
    b.dtype = DType::f32;
    c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  }
  b.shape.assign(c.sizes().begin(), c.sizes().end());
  if (b.shape.empty()) b.shape.push_back(1);
  b.data.resize(static_cast<std::size_t>(c.numel()) * dtype_size(b.dtype));
  if (!b.data.empty()) std::memcpy(b.data.data(), c.data_ptr(), b.data.size());
  return b;
}

torch::Tensor TensorBlob::to_tensor() const {
  auto opts = torch::TensorOptions().dtype(dtype == DType::f32 ? torch::kFloat32 : torch::kInt64);
  auto t = torch::empty(shape, opts);
  if (!data.empty()) std::memcpy(t.data_ptr(), data.data(), data.size());
  return t;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------- json glue

namespace {

json ref_json(const BlobRef& r) { return {{"blob", r.blob}, {"row", r.row}}; }

BlobRef ref_from(const json& j, const std::string& field) {
  try {
    return {j.at("blob").get<std::string>(), j.at("row").get<int64_t>()};
  } catch (const json::exception& e) {
    throw ValidationError(field, e.what());
  }
}

json blob_info_json(const BlobInfo& b) {
  json j = {{"name", b.name}, {"dtype", to_string(b.dtype)}, {"shape", b.shape}};
  if (!b.sha256.empty()) j["sha256"] = b.sha256;
  return j;
}

BlobInfo blob_info_from(const json& j) {
  BlobInfo b;
  try {
    b.name = j.at("name").get<std::string>();
    b.dtype = dtype_from_string(j.at("dtype").get<std::string>());
    b.shape = j.at("shape").get<std::vector<int64_t>>();
    if (j.contains("sha256")) b.sha256 = j.at("sha256").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError("blobs", e.what());
  }
  return b;
}

void write_bytes(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  write_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed json in " + p.string() + ": " + e.what());
  }
}

std::string blob_file(const std::string& name) { return name + ".bin"; }

void check_blob_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos)
    throw ValidationError("blobs", "illegal blob name '" + name + "'");
}

TensorBlob load_blob_file(const fs::path& dir, const BlobInfo& info) {
  TensorBlob b;
  b.name = info.name;
  b.dtype = info.dtype;
  b.shape = info.shape;
  auto p = dir / blob_file(info.name);
  if (!fs::exists(p)) throw ValidationError("blobs." + b.name, "file missing: " + p.string());
  b.data = read_bytes(p);
  auto want = static_cast<std::size_t>(b.numel()) * dtype_size(b.dtype);
  if (b.data.size() != want)
    throw DataError("corrupted blob '" + info.name + "': " + std::to_string(b.data.size()) +
                    " bytes on disk, shape needs " + std::to_string(want));
  return b;
}

}  // namespace

json to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"sample_id", s.sample_id},
                       {"subject_id", s.subject_id},
                       {"class_id", s.class_id},
                       {"x", ref_json(s.x)},
                       {"y", ref_json(s.y)},
                       {"f_y", ref_json(s.f_y)},
                       {"f_y_text", ref_json(s.f_y_text)},
                       {"factor",
                        {{"class_id", s.factor.class_id},
                         {"style", ref_json(s.factor.style)},
                         {"factor_seed", s.factor.factor_seed},
                         {"operator_seed", s.factor.operator_seed}}}});
  }
  json blobs = json::array();
  for (const auto& b : m.blobs) blobs.push_back(blob_info_json(b));
  return {{"format_version", m.format_version},
          {"subjects", m.subjects},
          {"classes", m.classes},
          {"samples", samples},
          {"splits", m.splits},
          {"blobs", blobs},
          {"generator", m.generator}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  auto field = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ValidationError(key, "missing");
    return j.at(key);
  };
  try {
    m.format_version = field("format_version").get<int>();
    if (m.format_version > kFormatVersion)
      throw DataError("unsupported format_version " + std::to_string(m.format_version) +
                      " (reader supports up to " + std::to_string(kFormatVersion) + ")");
    m.subjects = field("subjects").get<std::vector<int64_t>>();
    m.classes = field("classes").get<int64_t>();
    for (const auto& s : field("samples")) {
      SampleRecord r;
      r.sample_id = s.at("sample_id").get<int64_t>();
      r.subject_id = s.at("subject_id").get<int64_t>();
      r.class_id = s.at("class_id").get<int64_t>();
      r.x = ref_from(s.at("x"), "samples.x");
      r.y = ref_from(s.at("y"), "samples.y");
      r.f_y = ref_from(s.at("f_y"), "samples.f_y");
      r.f_y_text = ref_from(s.at("f_y_text"), "samples.f_y_text");
      const auto& f = s.at("factor");
      r.factor.class_id = f.at("class_id").get<int64_t>();
      r.factor.style = ref_from(f.at("style"), "samples.factor.style");
      r.factor.factor_seed = f.at("factor_seed").get<std::uint64_t>();
      r.factor.operator_seed = f.at("operator_seed").get<std::uint64_t>();
      m.samples.push_back(std::move(r));
    }
    m.splits = field("splits").get<std::map<std::string, std::vector<int64_t>>>();
    for (const auto& b : field("blobs")) m.blobs.push_back(blob_info_from(b));
    if (j.contains("generator")) m.generator = j.at("generator");
  } catch (const ValidationError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
  return m;
}

const BlobInfo* DatasetManifest::find_blob(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

void DatasetManifest::validate() const {
  if (format_version < 1 || format_version > kFormatVersion)
    throw ValidationError("format_version", "unsupported value " + std::to_string(format_version));
  if (classes < 1) throw ValidationError("classes", "must be >= 1");
  std::set<int64_t> subj(subjects.begin(), subjects.end());
  if (subj.size() != subjects.size()) throw ValidationError("subjects", "duplicate subject id");

  std::set<std::string> names;
  for (const auto& b : blobs) {
    check_blob_name(b.name);
    if (!names.insert(b.name).second) throw ValidationError("blobs", "duplicate blob " + b.name);
    if (b.shape.empty() || b.shape.size() > 4)
      throw ValidationError("blobs." + b.name + ".shape", "rank must be 1..4");
    for (auto s : b.shape)
      if (s <= 0) throw ValidationError("blobs." + b.name + ".shape", "dimensions must be positive");
  }

  auto check_ref = [&](const BlobRef& r, const std::string& field) {
    const BlobInfo* b = find_blob(r.blob);
    if (!b) throw ValidationError(field, "unresolved blob '" + r.blob + "'");
    if (r.row < 0 || r.row >= b->shape.front())
      throw ValidationError(field, "row " + std::to_string(r.row) + " out of range for " + r.blob);
  };

  std::set<int64_t> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.sample_id).second)
      throw ValidationError("samples.sample_id", "duplicate id " + std::to_string(s.sample_id));
    if (!subj.count(s.subject_id))
      throw ValidationError("samples.subject_id", "unknown subject " + std::to_string(s.subject_id));
    if (s.class_id < 0 || s.class_id >= classes)
      throw ValidationError("samples.class_id", "out of range: " + std::to_string(s.class_id));
    if (s.factor.class_id != s.class_id)
      throw ValidationError("samples.factor.class_id", "disagrees with class_id");
    check_ref(s.x, "samples.x");
    check_ref(s.y, "samples.y");
    check_ref(s.f_y, "samples.f_y");
    check_ref(s.f_y_text, "samples.f_y_text");
    check_ref(s.factor.style, "samples.factor.style");
  }

  std::set<int64_t> seen;
  for (const auto& [split, list] : splits) {
    for (auto id : list) {
      if (!ids.count(id))
        throw ValidationError("splits." + split, "unknown sample id " + std::to_string(id));
      if (!seen.insert(id).second)
        throw ValidationError("splits." + split, "sample " + std::to_string(id) + " in two splits");
    }
  }
}

// ---------------------------------------------------------------- accessor

BlobAccessor::BlobAccessor(fs::path blob_dir, std::vector<BlobInfo> table) : dir_(std::move(blob_dir)) {
  for (auto& b : table) table_.emplace(b.name, std::move(b));
}

bool BlobAccessor::contains(const std::string& name) const { return table_.count(name) != 0; }

std::vector<std::string> BlobAccessor::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : table_) out.push_back(k);
  return out;
}

const TensorBlob& BlobAccessor::blob(const std::string& name) const {
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(name); it != cache_.end()) return *it->second;
  auto it = table_.find(name);
  if (it == table_.end()) throw DataError("no blob named '" + name + "'");
  auto b = std::make_shared<const TensorBlob>(load_blob_file(dir_, it->second));
  return *cache_.emplace(name, std::move(b)).first->second;
}

// ---------------------------------------------------------------- dataset io

void write_dataset(DatasetManifest manifest, const std::vector<TensorBlob>& blobs, const fs::path& dir) {
  manifest.blobs.clear();
  for (const auto& b : blobs) {
    b.validate();
    manifest.blobs.push_back({b.name, b.dtype, b.shape, sha256_hex(b.data)});
  }
  manifest.validate();
  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw DataError("cannot create " + (dir / "blobs").string() + ": " + ec.message());
  for (const auto& b : blobs) write_bytes(dir / "blobs" / blob_file(b.name), b.data);
  write_text(dir / "manifest.json", to_json(manifest).dump(1) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  auto m = manifest_from_json(read_json(dir / "manifest.json"));
  m.validate();
  for (const auto& b : m.blobs) {
    auto p = dir / "blobs" / blob_file(b.name);
    if (!fs::exists(p)) throw ValidationError("blobs." + b.name, "file missing: " + p.string());
    int64_t n = 1;
    for (auto s : b.shape) n *= s;
    auto want = static_cast<std::uintmax_t>(n) * dtype_size(b.dtype);
    if (fs::file_size(p) != want)
      throw DataError("corrupted blob '" + b.name + "': " + std::to_string(fs::file_size(p)) +
                      " bytes on disk, shape needs " + std::to_string(want));
  }
  auto acc = std::make_shared<BlobAccessor>(dir / "blobs", m.blobs);
  return {std::move(m), std::move(acc)};
}

// ---------------------------------------------------------------- checkpoints

namespace {

json blob_table(const std::map<std::string, TensorBlob>& blobs) {
  json arr = json::array();
  for (const auto& [name, b] : blobs)
    arr.push_back({{"name", name}, {"dtype", to_string(b.dtype)}, {"shape", b.shape}});
  return arr;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& group : {&ckpt.params, &ckpt.optimizer}) {
    for (const auto& [name, b] : *group) {
      check_blob_name(name);
      b.validate();
      const char* prefix = group == &ckpt.params ? "param." : "optim.";
      write_bytes(dir / "blobs" / blob_file(prefix + name), b.data);
    }
  }
  std::set<std::string> subs;
  for (const auto& [name, _] : ckpt.params) subs.insert(name.substr(0, name.find('.')));
  json meta = {{"format_version", kFormatVersion},
               {"step", ckpt.step},
               {"config_hash", ckpt.config_hash},
               {"rng_state", ckpt.rng_state},
               {"submodules", subs},
               {"params", blob_table(ckpt.params)},
               {"optimizer", blob_table(ckpt.optimizer)},
               {"extra", ckpt.extra}};
  write_text(dir / "meta.json", meta.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir, const CheckpointLoadOptions& opts) {
  auto meta = read_json(dir / "meta.json");
  Checkpoint c;
  try {
    int version = meta.at("format_version").get<int>();
    if (version > kFormatVersion)
      throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    c.step = meta.at("step").get<int64_t>();
    c.config_hash = meta.at("config_hash").get<std::string>();
    c.rng_state = meta.at("rng_state").get<std::string>();
    c.extra = meta.value("extra", json::object());
    auto load_group = [&](const char* key, const char* prefix, std::map<std::string, TensorBlob>& out) {
      for (const auto& e : meta.at(key)) {
        BlobInfo info{prefix + e.at("name").get<std::string>(), dtype_from_string(e.at("dtype")),
                      e.at("shape").get<std::vector<int64_t>>(), ""};
        auto b = load_blob_file(dir / "blobs", info);
        b.name = e.at("name").get<std::string>();
        out.emplace(b.name, std::move(b));
      }
    };
    load_group("params", "param.", c.params);
    load_group("optimizer", "optim.", c.optimizer);
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint meta in " + dir.string() + ": " + e.what());
  }

  std::set<std::string> subs;
  for (const auto& [name, _] : c.params) subs.insert(name.substr(0, name.find('.')));
  for (const auto& need : opts.required_submodules)
    if (!subs.count(need)) throw DataError("checkpoint " + dir.string() + " is missing submodule '" + need + "'");

  if (opts.expected_config_hash && *opts.expected_config_hash != c.config_hash) {
    std::string msg = "checkpoint config hash " + c.config_hash + " != expected " + *opts.expected_config_hash;
    if (!opts.allow_hash_mismatch) throw DataError(msg);
    std::cerr << "warning: " << msg << "\n";
  }
  return c;
}

}  // namespace zsd
