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

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "test_util.hpp"
#include "zsd/error.hpp"
#include "zsd/synthgen.hpp"
#include "zsd/trainer.hpp"

using namespace zsd;
using nlohmann::json;

namespace {

// Three subjects (one held out), 16 training maps each, tiny model:
// 32 samples, batch 8, 4 steps per epoch.
RunConfig tiny_run(int epochs = 5) {
  RunConfig c;
  for (const char* o : {"data.subjects=3", "data.classes=4", "data.train_per_subject=16", "data.test_shared=4",
                        "data.height=16", "data.width=16", "data.patch=4", "data.embed_dim=8", "data.warp_pixels=1.5",
                        "model.brain_dim=16", "model.heads=2", "model.encoder_depth=1", "model.invariant_depth=1",
                        "model.head_hidden=16", "model.projector_hidden=16", "model.prior_hidden=16",
                        "model.prior_depth=1", "model.decoder_channels=8", "train.batch_size=8"})
    apply_override(c, o);
  c.train.epochs = epochs;
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

double recomputed_total(const json& r, const RunConfig& c) {
  const auto& w = c.train.weights;
  return w.rec * r.at("rec").get<double>() + w.dis * r.at("dis").get<double>() + w.cls * r.at("cls").get<double>() +
         w.inv * r.at("inv").get<double>() + w.spe * r.at("spe").get<double>() + w.sem * r.at("sem").get<double>() +
         30.0 * r.at("prior").get<double>();
}

}  // namespace

TEST_CASE("total_loss: examples") {
  TrainConfig t;
  AblationFlags all;
  LossBundle zero;
  CHECK(total_loss(zero, t, all) == 0.0);
  LossBundle prior_only;
  prior_only.prior = 0.1;
  CHECK(total_loss(prior_only, t, all) == doctest::Approx(3.0).epsilon(1e-12));

  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    LossBundle p;
    p.rec = u(rng), p.dis = u(rng), p.cls = u(rng), p.inv = u(rng), p.spe = u(rng), p.sem = u(rng), p.prior = u(rng);
    double sum = p.rec + p.dis + p.cls + p.inv + p.spe + p.sem + 30.0 * p.prior;
    CHECK(total_loss(p, t, all) == doctest::Approx(sum).epsilon(1e-12));

    // lambda weighting: a change of delta in the prior moves the total by 30 delta.
    auto q = p;
    q.prior += 0.25;
    CHECK(total_loss(q, t, all) - total_loss(p, t, all) == doctest::Approx(7.5).epsilon(1e-9));

    AblationFlags no_sife_adv;
    no_sife_adv.sife_adv = false;
    CHECK(total_loss(p, t, no_sife_adv) == doctest::Approx(sum - p.dis - p.cls).epsilon(1e-12));
    AblationFlags none;
    none.sife_adv = none.sife_anchor = none.ssfe_adv = none.ssfe_anchor = false;
    CHECK(total_loss(p, t, none) == doctest::Approx(p.spe + 30.0 * p.prior).epsilon(1e-12));
  }

  for (const auto& name : LossBundle::term_names()) {
    LossBundle bad;
    if (name == "rec") bad.rec = std::nan("");
    if (name == "dis") bad.dis = std::nan("");
    if (name == "cls") bad.cls = std::nan("");
    if (name == "inv") bad.inv = std::numeric_limits<double>::infinity();
    if (name == "spe") bad.spe = std::nan("");
    if (name == "sem") bad.sem = std::nan("");
    if (name == "prior") bad.prior = std::nan("");
    try {
      total_loss(bad, t, all);
      FAIL("no abort for " << name);
    } catch (const TrainingAbort& e) {
      CHECK(e.term() == name);
      CHECK(std::string(e.what()).find(name) != std::string::npos);
    }
  }
}

TEST_CASE("total_loss: tensor form agrees with the logged form") {
  LossTerms terms{torch::tensor(0.5), torch::tensor(1.5), torch::tensor(2.0), torch::tensor(0.25),
                  torch::tensor(3.0), torch::tensor(1.0), torch::tensor(0.01)};
  TrainConfig t;
  t.weights.inv = 2.0;
  AblationFlags a;
  a.ssfe_anchor = false;
  CHECK(total_loss(terms, t, a).item<double>() == doctest::Approx(total_loss(to_bundle(terms), t, a)).epsilon(1e-6));
}

TEST_CASE("train: smoke run with two subjects, eight maps, two epochs") {
  test::TempDir dir;
  auto c = tiny_run(2);
  apply_override(c, "data.subjects=2");
  apply_override(c, "data.train_per_subject=8");
  generate_dataset(c.data, dir / "data");
  auto result = train(dir / "data", c, dir / "run");
  CHECK(result.steps == result.total_steps);
  CHECK(result.steps == 2);
  CHECK(std::filesystem::exists(dir / "run" / "checkpoints" / "final"));
  CHECK(std::filesystem::exists(dir / "run" / "config.hash"));
  auto ck = load_checkpoint(dir / "run" / "checkpoints" / "final");
  CHECK(ck.config_hash == config_hash(c));
  // One training subject: the subject terms are defined as zero.
  for (const auto& r : result.log) {
    CHECK(r.losses.dis == 0.0);
    CHECK(r.losses.cls == 0.0);
  }
}

TEST_CASE("train: every logged total is the weighted sum with lambda 30, log schema") {
  test::TempDir dir;
  auto c = tiny_run(3);
  c.train.weights.sem = 0.5;
  generate_dataset(c.data, dir / "data");
  train(dir / "data", c, dir / "run");
  auto lines = read_lines(dir / "run" / "metrics.jsonl");
  REQUIRE(lines.size() == 12);
  const std::set<std::string> keys{"step", "epoch", "lr",  "beta1", "grl_scale", "grad_norm", "mixed", "rec",
                                   "dis",  "cls",   "inv", "spe",   "sem",       "prior",     "total", "decoder"};
  int64_t step = 0;
  for (const auto& line : lines) {
    auto r = json::parse(line);
    std::set<std::string> got;
    for (const auto& [k, _] : r.items()) got.insert(k);
    CHECK(got == keys);
    CHECK(r.at("step").get<int64_t>() == ++step);
    double total = r.at("total").get<double>();
    CHECK(std::abs(total - recomputed_total(r, c)) <= 1e-5 * std::abs(total));
    CHECK(StepRecord::from_json(r).to_json() == r);
  }
}

TEST_CASE("train: identical config and seed give identical logs; resume continues exactly") {
  test::TempDir dir;
  auto c = tiny_run(5);
  c.train.checkpoint_every = 10;
  generate_dataset(c.data, dir / "data");
  auto a = train(dir / "data", c, dir / "a");
  auto b = train(dir / "data", c, dir / "b");
  CHECK(read_lines(dir / "a" / "metrics.jsonl") == read_lines(dir / "b" / "metrics.jsonl"));
  REQUIRE(a.log.size() == 20);

  TrainOptions first;
  first.stop_after = 10;
  auto part = train(dir / "data", c, dir / "r", first);
  CHECK(part.steps == 10);
  TrainOptions resume;
  resume.resume_from = dir / "r" / "checkpoints" / "step_000010";
  auto rest = train(dir / "data", c, dir / "r", resume);
  REQUIRE(rest.log.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(rest.log[i].to_json() == a.log[i + 10].to_json());
  CHECK(read_lines(dir / "r" / "metrics.jsonl") == read_lines(dir / "a" / "metrics.jsonl"));
  const bool same_params = load_checkpoint(dir / "r" / "checkpoints" / "final").params ==
                           load_checkpoint(dir / "a" / "checkpoints" / "final").params;
  CHECK(same_params);

  auto other = c;
  other.train.seed = 1;
  auto d = train(dir / "data", other, dir / "d");
  CHECK(d.log[0].losses.total != a.log[0].losses.total);

  auto changed = c;
  changed.train.lr = 2e-3;
  TrainOptions wrong;
  wrong.resume_from = dir / "r" / "checkpoints" / "step_000010";
  CHECK_THROWS_AS(train(dir / "data", changed, dir / "w", wrong), DataError);
}

TEST_CASE("train: a held-out map smuggled into the training split aborts") {
  test::TempDir dir;
  auto c = tiny_run(1);
  generate_dataset(c.data, dir / "data");
  auto path = dir / "data" / "manifest.json";
  json m;
  {
    std::ifstream in(path);
    in >> m;
  }
  int64_t held_row = -1;
  for (const auto& s : m["samples"])
    if (s["subject_id"] == c.train.held_out_subject) held_row = s["x"]["row"].get<int64_t>();
  REQUIRE(held_row >= 0);
  const auto train_ids = m["splits"]["train"].get<std::vector<int64_t>>();
  for (auto& s : m["samples"])
    if (s["subject_id"] == 2 && std::find(train_ids.begin(), train_ids.end(), s["sample_id"].get<int64_t>()) !=
                                    train_ids.end()) {
      s["x"]["row"] = held_row;
      break;
    }
  {
    std::ofstream out(path);
    out << m.dump(1);
  }
  CHECK_THROWS_AS(train(dir / "data", c, dir / "run"), ProtocolError);

  auto bad = c;
  bad.train.held_out_subject = 9;
  CHECK_THROWS_AS(training_subjects(read_dataset(dir / "data").manifest, bad.train), DataError);
}

TEST_CASE("train: a diverging run aborts with a last-good checkpoint") {
  test::TempDir dir;
  auto c = tiny_run(2);
  c.train.lr = 1e30;
  generate_dataset(c.data, dir / "data");
  std::string term;
  try {
    train(dir / "data", c, dir / "run");
  } catch (const TrainingAbort& e) {
    term = e.term();
  }
  CHECK(!term.empty());
  auto last = dir / "run" / "checkpoints" / "last_good";
  REQUIRE(std::filesystem::exists(last));
  auto ck = load_checkpoint(last);
  for (const auto& [name, blob] : ck.params) CHECK_MESSAGE(torch::isfinite(blob.to_tensor()).all().item<bool>(), name);
}

TEST_CASE("training_subjects: every subject except the held-out one, optionally truncated") {
  DatasetManifest m;
  m.subjects = {3, 1, 2, 4};
  TrainConfig t;
  t.held_out_subject = 2;
  CHECK(training_subjects(m, t) == std::vector<int64_t>{1, 3, 4});
  t.num_train_subjects = 2;
  CHECK(training_subjects(m, t) == std::vector<int64_t>{1, 3});
  t.num_train_subjects = 4;
  CHECK_THROWS_AS(training_subjects(m, t), ConfigError);
}
