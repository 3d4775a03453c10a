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

#include <doctest.h>

#include <fstream>
#include <random>

#include "test_util.hpp"
#include "zsd/error.hpp"
#include "zsd/synthgen.hpp"
#include "zsd/tensor_store.hpp"

using namespace zsd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_config() {
  SynthConfig c;
  c.subjects = 2;
  c.classes = 2;
  c.train_per_subject = 4;
  c.test_shared = 2;
  c.height = c.width = 16;
  c.patch = 4;
  c.embed_dim = 8;
  c.warp_pixels = 1.5;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json_file(const fs::path& p) { return json::parse(read_file(p)); }

void write_json_file(const json& j, const fs::path& p) {
  std::ofstream out(p);
  out << j.dump(1);
}

// Every leaf of a JSON document as a JSON pointer.
void leaves(const json& j, const std::string& at, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) leaves(it.value(), at + "/" + it.key(), out);
  } else if (j.is_array() && !j.empty()) {
    for (std::size_t i = 0; i < j.size(); ++i) leaves(j[i], at + "/" + std::to_string(i), out);
  } else {
    out.push_back(at);
  }
}

bool rejected(const json& j) {
  try {
    auto m = manifest_from_json(j);
    m.validate();
  } catch (const DataError&) {
    return true;
  }
  return false;
}

}  // namespace

TEST_CASE("blob: 2x3 f32 zeros round-trip through a dataset directory") {
  test::TempDir dir;
  auto blob = TensorBlob::from_tensor("zeros", torch::zeros({2, 3}));
  DatasetManifest m;
  m.subjects = {1};
  m.classes = 1;
  write_dataset(m, {blob}, dir.path());
  auto d = read_dataset(dir.path());
  CHECK(d.blobs->blob("zeros") == blob);
  CHECK(torch::equal(d.blobs->tensor("zeros"), torch::zeros({2, 3})));
}

TEST_CASE("blob: round-trip identity over random dtypes and shapes") {
  std::mt19937_64 rng(7);
  test::TempDir dir;
  for (int trial = 0; trial < 25; ++trial) {
    int rank = 1 + int(rng() % 4);
    std::vector<int64_t> shape;
    for (int i = 0; i < rank; ++i) shape.push_back(1 + int64_t(rng() % 5));
    torch::Tensor t = (rng() % 2) ? torch::randn(shape) : torch::randint(-1000000, 1000000, shape, torch::kInt64);
    auto blob = TensorBlob::from_tensor("t" + std::to_string(trial), t);
    CHECK_NOTHROW(blob.validate());
    CHECK(torch::equal(blob.to_tensor(), t));
    DatasetManifest m;
    m.classes = 1;
    auto sub = dir / ("d" + std::to_string(trial));
    write_dataset(m, {blob}, sub);
    auto back = read_dataset(sub).blobs->blob(blob.name);
    CHECK(back == blob);
  }
}

TEST_CASE("blob: validation rejects bad rank and byte length") {
  TensorBlob b{"b", DType::f32, {2, 2}, std::vector<std::uint8_t>(15)};
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b.data.resize(16);
  CHECK_NOTHROW(b.validate());
  b.shape = {1, 1, 1, 1, 4};
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b.shape = {};
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b.shape = {4, 0};
  CHECK_THROWS_AS(b.validate(), ValidationError);
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string()) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("dataset: empty dataset is a valid manifest with an empty accessor") {
  test::TempDir dir;
  DatasetManifest m;
  m.classes = 3;
  write_dataset(m, {}, dir.path());
  auto d = read_dataset(dir.path());
  CHECK(d.manifest.samples.empty());
  CHECK(d.blobs->size() == 0);
}

TEST_CASE("dataset: missing blob file is a validation error naming the blob") {
  test::TempDir dir;
  generate_dataset(tiny_config(), dir.path());
  fs::remove(dir.path() / "blobs" / "y.bin");
  try {
    read_dataset(dir.path());
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "blobs.y");
  }
}

TEST_CASE("dataset: truncated blob file is a corruption error") {
  test::TempDir dir;
  generate_dataset(tiny_config(), dir.path());
  auto p = dir.path() / "blobs" / "x.bin";
  fs::resize_file(p, fs::file_size(p) - 4);
  CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("corrupted blob"), DataError);
}

TEST_CASE("dataset: a higher format version is rejected") {
  test::TempDir dir;
  generate_dataset(tiny_config(), dir.path());
  auto j = read_json_file(dir.path() / "manifest.json");
  j["format_version"] = kFormatVersion + 1;
  write_json_file(j, dir.path() / "manifest.json");
  CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("format_version"), DataError);
}

TEST_CASE("dataset: write refuses a manifest citing an unknown blob") {
  test::TempDir dir;
  DatasetManifest m;
  m.subjects = {1};
  m.classes = 1;
  SampleRecord r;
  r.subject_id = 1;
  r.x = r.y = r.f_y = r.f_y_text = r.factor.style = {"nope", 0};
  m.samples.push_back(r);
  CHECK_THROWS_AS(write_dataset(m, {}, dir.path()), ValidationError);
}

TEST_CASE("dataset: 10-subject 8-class set round-trips with equal SHA-256 per blob") {
  test::TempDir dir;
  auto cfg = tiny_config();
  cfg.subjects = 10;
  cfg.classes = 8;
  cfg.train_per_subject = 8;
  auto m = generate_dataset(cfg, dir.path());
  auto d = read_dataset(dir.path());
  REQUIRE(d.manifest.blobs.size() == m.blobs.size());
  for (const auto& info : d.manifest.blobs) {
    CHECK(info.sha256.size() == 64);
    CHECK(sha256_hex(d.blobs->blob(info.name).data) == info.sha256);
  }
  CHECK(d.manifest == m);
}

TEST_CASE("dataset: split sizes of the default generator layout") {
  test::TempDir dir;
  auto cfg = tiny_config();
  cfg.subjects = 3;
  cfg.train_per_subject = 256;
  cfg.test_shared = 64;
  generate_dataset(cfg, dir.path());
  auto d = read_dataset(dir.path());
  CHECK(d.manifest.splits.at("train").size() == 3 * 256);
  CHECK(d.manifest.splits.at("test").size() == 3 * 64);
  CHECK(d.manifest.samples.size() == 3 * 320);
  CHECK(d.blobs->tensor("x").size(0) == 3 * 320);
}

TEST_CASE("manifest: every single-field mutation of a valid manifest is rejected") {
  test::TempDir dir;
  generate_dataset(tiny_config(), dir.path());
  const json good = read_json_file(dir.path() / "manifest.json");
  REQUIRE_FALSE(rejected(good));

  // Type-breaking replacement of every leaf outside the free-form generator record.
  std::vector<std::string> paths;
  leaves(good, "", paths);
  int mutated = 0;
  for (const auto& p : paths) {
    if (p.rfind("/generator", 0) == 0 || p.find("/sha256") != std::string::npos) continue;
    json bad = good;
    auto& leaf = bad[json::json_pointer(p)];
    leaf = leaf.is_string() ? json(12345) : json("bogus");
    CHECK_MESSAGE(rejected(bad), "mutation accepted at " << p);
    ++mutated;
  }
  CHECK(mutated > 100);

  // Value mutations that keep the type but break an invariant.
  std::vector<std::pair<std::string, json>> cases = {
      {"/format_version", 0},
      {"/format_version", kFormatVersion + 1},
      {"/classes", 0},
      {"/subjects/1", good["subjects"][0]},
      {"/samples/0/subject_id", 99},
      {"/samples/0/class_id", 2},
      {"/samples/0/class_id", -1},
      {"/samples/0/factor/class_id", 1 - good["samples"][0]["class_id"].get<int>()},
      {"/samples/1/sample_id", good["samples"][0]["sample_id"]},
      {"/samples/0/x/row", 100000},
      {"/samples/0/x/row", -1},
      {"/samples/0/y/blob", "missing"},
      {"/samples/0/factor/style/blob", "missing"},
      {"/splits/train/0", 99999},
      {"/splits/test/0", good["splits"]["train"][0]},
      {"/blobs/0/shape/0", 0},
      {"/blobs/0/shape", json::array()},
      {"/blobs/0/dtype", "f16"},
      {"/blobs/0/name", "../escape"},
      {"/blobs/1/name", good["blobs"][0]["name"]},
  };
  for (const auto& [p, v] : cases) {
    json bad = good;
    bad[json::json_pointer(p)] = v;
    CHECK_MESSAGE(rejected(bad), "mutation accepted at " << p << " = " << v.dump());
  }
  for (const char* key : {"format_version", "subjects", "classes", "samples", "splits", "blobs"}) {
    json bad = good;
    bad.erase(key);
    CHECK_MESSAGE(rejected(bad), "missing key accepted: " << key);
  }
}

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.step = 42;
  c.config_hash = "abc123";
  c.rng_state = "{\"seed\":0,\"step\":42}";
  for (const auto& sub : checkpoint_submodules())
    c.params.emplace(sub + ".weight", TensorBlob::from_tensor(sub + ".weight", torch::randn({3, 2})));
  c.optimizer.emplace("main.steps", TensorBlob::from_tensor("main.steps", torch::tensor({42}, torch::kInt64)));
  c.optimizer.emplace("main.m.encoder.weight", TensorBlob::from_tensor("x", torch::randn({3, 2})));
  c.optimizer.at("main.m.encoder.weight").name = "main.m.encoder.weight";
  c.extra = {{"note", "test"}};
  return c;
}

}  // namespace

TEST_CASE("checkpoint: save/load round trip is bitwise equal and re-save is byte-identical") {
  test::TempDir dir;
  auto c = sample_checkpoint();
  save_checkpoint(c, dir / "a");
  auto back = load_checkpoint(dir / "a");
  CHECK(back == c);
  save_checkpoint(back, dir / "b");
  for (const auto& e : fs::directory_iterator(dir / "a" / "blobs"))
    CHECK(read_file(e.path()) == read_file(dir / "b" / "blobs" / e.path().filename()));
  CHECK(read_file(dir / "a" / "meta.json") == read_file(dir / "b" / "meta.json"));
}

TEST_CASE("checkpoint: missing D_dis blob is a load error") {
  test::TempDir dir;
  auto c = sample_checkpoint();
  c.params.erase("d_dis.weight");
  save_checkpoint(c, dir.path());
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.path()), doctest::Contains("d_dis"), DataError);
}

TEST_CASE("checkpoint: config hash mismatch throws unless overridden") {
  test::TempDir dir;
  auto c = sample_checkpoint();
  save_checkpoint(c, dir.path());
  CheckpointLoadOptions o;
  o.expected_config_hash = "different";
  CHECK_THROWS_AS(load_checkpoint(dir.path(), o), DataError);
  o.allow_hash_mismatch = true;
  CHECK(load_checkpoint(dir.path(), o) == c);
}
