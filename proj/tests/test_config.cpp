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
#include <string>

#include "test_util.hpp"
#include "zsd/config.hpp"
#include "zsd/error.hpp"
#include "zsd/tensor_store.hpp"

using namespace zsd;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool names(const std::string& message, const std::string& key) { return message.find(key) != std::string::npos; }

}  // namespace

TEST_CASE("config: serialization is a fixed point with a stable hash") {
  RunConfig c;
  auto j = to_json(c);
  auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c) == sha256_hex(canonical_string(c)));
  CHECK(config_hash(c).size() == 64);

  apply_override(c, "train.lr=0.005");
  apply_override(c, "ablation.sife_adv=false");
  apply_override(c, "model.prior_condition=F");
  CHECK(c.train.lr == 0.005);
  CHECK(!c.ablation.sife_adv);
  CHECK(c.model.prior_condition == "F");
  auto again = run_config_from_json(json::parse(to_json(c).dump()));
  CHECK(canonical_string(again) == canonical_string(c));
  CHECK(config_hash(again) != config_hash(RunConfig{}));
}

TEST_CASE("config: every scalar change moves the hash") {
  const auto base = to_json(RunConfig{});
  const auto base_hash = config_hash(RunConfig{});
  int changed = 0;
  for (const auto& [section, fields] : base.items())
    for (const auto& [key, value] : fields.items()) {
      auto j = base;
      auto& v = j[section][key];
      if (v.is_boolean()) v = !v.get<bool>();
      else if (v.is_number_integer()) v = v.get<int64_t>() + 2;
      else if (v.is_number()) v = v.get<double>() * 0.5;
      else continue;
      const std::string path = section + "." + key;
      CHECK_MESSAGE(config_hash(run_config_from_json(j)) != base_hash, path);
      ++changed;
    }
  CHECK(changed > 40);
}

TEST_CASE("config: partial documents keep defaults") {
  auto c = run_config_from_json(json{{"train", {{"epochs", 3}}}});
  CHECK(c.train.epochs == 3);
  RunConfig d;
  d.train.epochs = 3;
  CHECK(config_hash(c) == config_hash(d));
  CHECK(config_hash(run_config_from_json(json::object())) == config_hash(RunConfig{}));
}

TEST_CASE("config: unknown keys, wrong types and bad values name the key") {
  CHECK(names(error_of([] { run_config_from_json(json{{"train", {{"epoch", 3}}}}); }), "train.epoch"));
  CHECK(names(error_of([] { run_config_from_json(json{{"trainer", json::object()}}); }), "trainer"));
  CHECK(names(error_of([] { run_config_from_json(json{{"train", {{"lr", "fast"}}}}); }), "train.lr"));
  CHECK(names(error_of([] { run_config_from_json(json{{"train", {{"epochs", 1.5}}}}); }), "train.epochs"));
  CHECK(names(error_of([] { run_config_from_json(json{{"ablation", {{"ssfe_adv", 1}}}}); }), "ablation.ssfe_adv"));
  CHECK(names(error_of([] { run_config_from_json(json{{"train", {{"lr", -1.0}}}}).validate(); }), "train.lr"));
  CHECK(names(error_of([] { run_config_from_json(json{{"model", {{"prior_condition", "G"}}}}).validate(); }),
              "model.prior_condition"));
  CHECK(error_of([] { RunConfig{}.validate(); }).empty());
  RunConfig c;
  CHECK(names(error_of([&] { apply_override(c, "train.weights.rec=5"); }), "train.weights.rec"));
  CHECK(names(error_of([&] { apply_override(c, "nope.x=1"); }), "nope"));
  CHECK(!error_of([&] { apply_override(c, "train.lr"); }).empty());
  CHECK(!error_of([] { run_config_from_json(json::array()); }).empty());
}

TEST_CASE("config: resolved files round-trip through load_run_config") {
  test::TempDir dir;
  RunConfig c;
  apply_override(c, "train.epochs=7");
  write_resolved_config(c, dir.path());
  auto loaded = load_run_config(dir / "config.json");
  CHECK(config_hash(loaded) == config_hash(c));
  std::ifstream in(dir / "config.hash");
  std::string hash;
  in >> hash;
  CHECK(hash == config_hash(c));
  {
    std::ofstream bad(dir / "broken.json");
    bad << "{ \"train\": ";
  }
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
  {
    std::ofstream commented(dir / "commented.json");
    commented << "{\n  // peak learning rate\n  \"train\": {\"lr\": 0.002} /* inline */\n}\n";
  }
  CHECK(load_run_config(dir / "commented.json").train.lr == 0.002);
  CHECK_THROWS(load_run_config(dir / "missing.json"));
}
