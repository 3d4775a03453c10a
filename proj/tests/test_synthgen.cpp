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
#include <set>

#include "test_util.hpp"
#include "zsd/error.hpp"
#include "zsd/metrics.hpp"
#include "zsd/synthgen.hpp"

using namespace zsd;
namespace fs = std::filesystem;

namespace {

double cosine(const Map2D& a, const Map2D& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    ab += double(a.data[i]) * b.data[i];
    aa += double(a.data[i]) * a.data[i];
    bb += double(b.data[i]) * b.data[i];
  }
  return ab / std::sqrt(aa * bb);
}

torch::Tensor as_row(const Map2D& m) { return torch::tensor(m.data).view({1, -1}); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SynthConfig small_config() {
  SynthConfig c;
  c.subjects = 3;
  c.classes = 4;
  c.train_per_subject = 8;
  c.test_shared = 4;
  c.height = c.width = 32;
  c.patch = 8;
  c.embed_dim = 8;
  c.warp_pixels = 2.0;
  return c;
}

}  // namespace

TEST_CASE("render: deterministic and bounded") {
  SynthWorld world(SynthConfig{});
  std::mt19937_64 rng(3);
  for (int c = 0; c < 8; ++c) {
    auto f = world.draw_factor(c, rng);
    auto a = world.render_stimulus(f);
    CHECK(a == world.render_stimulus(f));
    for (float v : a.data) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
}

TEST_CASE("render: zero style gives a centered shape") {
  SynthWorld world(SynthConfig{});
  const auto& cfg = world.config();
  for (int c = 0; c < cfg.classes; ++c) {
    SemanticFactor f{c, std::vector<float>(std::size_t(cfg.style_dim), 0.0f)};
    auto img = world.render_stimulus(f);
    double mass = 0, mr = 0, mc = 0;
    for (int r = 0; r < img.height; ++r)
      for (int col = 0; col < img.width; ++col) {
        mass += img.at(r, col);
        mr += img.at(r, col) * r;
        mc += img.at(r, col) * col;
      }
    REQUIRE(mass > 0);
    CHECK(mr / mass == doctest::Approx((img.height - 1) / 2.0).epsilon(0.03));
    CHECK(mc / mass == doctest::Approx((img.width - 1) / 2.0).epsilon(0.03));
  }
}

TEST_CASE("render: pixel-space nearest centroid separates class pairs") {
  SynthWorld world(SynthConfig{});
  const int per_class = 1000;
  std::mt19937_64 rng(11);
  const int k_count = world.config().classes;
  std::vector<std::vector<Map2D>> imgs(static_cast<std::size_t>(k_count));
  for (int c = 0; c < k_count; ++c)
    for (int i = 0; i < per_class; ++i) imgs[std::size_t(c)].push_back(world.render_stimulus(world.draw_factor(c, rng)));
  // Centroids from the first half of each class, accuracy on the second half.
  const std::size_t pixels = imgs[0][0].data.size();
  std::vector<std::vector<double>> cent(std::size_t(k_count), std::vector<double>(pixels, 0.0));
  for (int c = 0; c < k_count; ++c)
    for (int i = 0; i < per_class / 2; ++i)
      for (std::size_t p = 0; p < pixels; ++p) cent[std::size_t(c)][p] += imgs[std::size_t(c)][std::size_t(i)].data[p] / (per_class / 2.0);
  auto dist = [&](const Map2D& m, int c) {
    double d = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      double e = m.data[p] - cent[std::size_t(c)][p];
      d += e * e;
    }
    return d;
  };
  for (int ca = 0; ca < k_count; ++ca)
    for (int cb = ca + 1; cb < k_count; ++cb) {
      int correct = 0, total = 0;
      for (int k : {ca, cb})
        for (int i = per_class / 2; i < per_class; ++i) {
          const auto& m = imgs[std::size_t(k)][std::size_t(i)];
          int other = k == ca ? cb : ca;
          correct += dist(m, k) < dist(m, other);
          ++total;
        }
      CHECK_MESSAGE(double(correct) / total >= 0.99, "classes " << ca << "," << cb);
    }
}

TEST_CASE("template: deterministic, class-distinct, normalized energy") {
  SynthWorld world(SynthConfig{});
  std::mt19937_64 rng(5);
  double worst = -1;
  for (int i = 0; i < 100; ++i) {
    int ca = int(rng() % 8), cb = (ca + 1 + int(rng() % 7)) % 8;
    auto fa = world.draw_factor(ca, rng), fb = world.draw_factor(cb, rng);
    auto ta = world.neural_template(fa);
    CHECK(ta == world.neural_template(fa));
    worst = std::max(worst, cosine(ta, world.neural_template(fb)));
    // Energy per pixel: the template is scaled to unit RMS.
    double e = ta.rms();
    CHECK(std::isfinite(e));
    CHECK(e >= 0.1);
    CHECK(e <= 10.0);
  }
  CHECK(worst < 0.9);
}

TEST_CASE("subject operator: identity operator leaves the template unchanged") {
  SynthWorld world(SynthConfig{});
  std::mt19937_64 rng(1);
  auto t = world.neural_template(world.draw_factor(2, rng));
  auto id = SubjectOperator::identity(1, t.height, t.width);
  std::mt19937_64 noise(9);
  CHECK(apply_subject(t, id, noise) == t);
}

TEST_CASE("subject operator: noiseless operator is deterministic and does not touch the rng") {
  SynthWorld world(SynthConfig{});
  std::mt19937_64 rng(1);
  auto t = world.neural_template(world.draw_factor(4, rng));
  auto op = world.subject(3);
  op.noise_sigma = 0.0f;
  std::mt19937_64 a(1), b(2);
  CHECK(apply_subject(t, op, a) == apply_subject(t, op, b));
  CHECK(a() == std::mt19937_64(1)());
}

TEST_CASE("subject operator: positive gain, bounded invertible warp, reproducible from seed") {
  SynthConfig cfg;
  SynthWorld world(cfg);
  for (int s = 1; s <= cfg.subjects; ++s) {
    const auto& op = world.subject(s);
    for (float g : op.gain.data) REQUIRE(g > 0.0f);
    CHECK(op.max_displacement() <= cfg.width / 8.0f);
    CHECK(op.min_jacobian_det() > 0.0);
    auto again = SynthWorld(cfg).make_operator(s);
    CHECK(again.gain == op.gain);
    CHECK(again.shift_r == op.shift_r);
    CHECK(again.shift_c == op.shift_c);
    CHECK(again.bias == op.bias);
  }
  CHECK_FALSE(world.subject(1).gain == world.subject(2).gain);
}

TEST_CASE("target embeddings: unit norm, text target depends on class only") {
  SynthConfig cfg;
  SynthWorld world(cfg);
  std::mt19937_64 rng(8);
  auto f1 = world.draw_factor(3, rng), f2 = world.draw_factor(3, rng);
  REQUIRE(f1.style != f2.style);
  auto [v1, t1] = world.target_embeddings(f1);
  auto [v2, t2] = world.target_embeddings(f2);
  CHECK(t1 == t2);
  CHECK(v1 != v2);
  auto again = world.target_embeddings(f1);
  CHECK(again.first == v1);
  CHECK(again.second == t1);
  const int l = cfg.tokens(), c2 = cfg.embed_dim;
  REQUIRE(v1.size() == std::size_t(l * c2));
  for (int r = 0; r < l; ++r) {
    double n = 0;
    for (int k = 0; k < c2; ++k) n += double(v1[std::size_t(r * c2 + k)]) * v1[std::size_t(r * c2 + k)];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
  }
  double n = 0;
  for (float v : t1) n += double(v) * v;
  CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("generate: config validation") {
  test::TempDir dir;
  auto bad = small_config();
  bad.subjects = 1;
  CHECK_THROWS_AS(generate_dataset(bad, dir.path()), ConfigError);
  bad = small_config();
  bad.classes = 1;
  CHECK_THROWS_AS(generate_dataset(bad, dir.path()), ConfigError);
  bad = small_config();
  bad.patch = 5;
  CHECK_THROWS_AS(generate_dataset(bad, dir.path()), ConfigError);
  bad = small_config();
  bad.warp_pixels = 5.0;
  CHECK_THROWS_AS(generate_dataset(bad, dir.path()), ConfigError);
}

TEST_CASE("generate: S=2 K=2 N=4 smoke set counts and shared test factors") {
  test::TempDir dir;
  SynthConfig c = small_config();
  c.subjects = 2;
  c.classes = 2;
  c.train_per_subject = 4;
  c.test_shared = 2;
  auto m = generate_dataset(c, dir.path());
  CHECK(m.splits.at("train").size() == 8);
  CHECK(m.splits.at("test").size() == 4);
  CHECK(m.subjects == std::vector<int64_t>{1, 2});

  std::map<int64_t, std::set<std::uint64_t>> test_factors, train_factors;
  for (auto id : m.splits.at("test")) test_factors[m.samples[std::size_t(id)].subject_id].insert(m.samples[std::size_t(id)].factor.factor_seed);
  for (auto id : m.splits.at("train")) train_factors[m.samples[std::size_t(id)].subject_id].insert(m.samples[std::size_t(id)].factor.factor_seed);
  CHECK(test_factors[1] == test_factors[2]);
  for (auto f : train_factors[1]) CHECK(train_factors[2].count(f) == 0);
}

TEST_CASE("generate: same seed gives a byte-identical dataset, another seed does not") {
  test::TempDir dir;
  auto c = small_config();
  generate_dataset(c, dir / "a");
  generate_dataset(c, dir / "b");
  c.seed = 1;
  generate_dataset(c, dir / "c");
  CHECK(read_file(dir / "a" / "manifest.json") == read_file(dir / "b" / "manifest.json"));
  for (const auto& e : fs::directory_iterator(dir / "a" / "blobs")) {
    auto name = e.path().filename();
    CHECK(read_file(e.path()) == read_file(dir / "b" / "blobs" / name));
  }
  CHECK(read_file(dir / "a" / "blobs" / "x.bin") != read_file(dir / "c" / "blobs" / "x.bin"));
}

TEST_CASE("generate: samples are finite with unit-norm targets and stimuli in [0,1]") {
  test::TempDir dir;
  generate_dataset(small_config(), dir.path());
  auto d = read_dataset(dir.path());
  auto x = d.blobs->tensor("x");
  auto y = d.blobs->tensor("y");
  CHECK(torch::isfinite(x).all().item<bool>());
  CHECK(y.min().item<float>() >= 0.0f);
  CHECK(y.max().item<float>() <= 1.0f);
  auto rows = d.blobs->tensor("f_y").norm(2, -1);
  CHECK(torch::allclose(rows, torch::ones_like(rows), 1e-5, 1e-5));
  auto t = d.blobs->tensor("f_y_text").norm(2, -1);
  CHECK(torch::allclose(t, torch::ones_like(t), 1e-5, 1e-5));
}

TEST_CASE("generate: templates are identical across subjects for a shared factor") {
  auto c = small_config();
  SynthWorld world(c);
  std::mt19937_64 rng(0);
  auto f = world.draw_factor(1, rng);
  auto t = world.neural_template(f);
  SynthWorld other(c);
  CHECK(other.neural_template(f) == t);
  // Subject differences live entirely in the operator: with noise off, the
  // maps of two subjects differ, the template they share does not.
  auto op1 = world.subject(1), op2 = world.subject(2);
  op1.noise_sigma = op2.noise_sigma = 0.0f;
  std::mt19937_64 n(0);
  CHECK_FALSE(apply_subject(t, op1, n) == apply_subject(t, op2, n));
}

TEST_CASE("oracles on the default configuration") {
  test::TempDir dir;
  SynthConfig cfg;  // 8 subjects, 8 classes, 256 train + 64 shared test each
  auto m = generate_dataset(cfg, dir.path());
  auto d = read_dataset(dir.path());
  auto train = torch::tensor(m.splits.at("train"), torch::kInt64);
  auto x = d.blobs->tensor("x").index_select(0, train).flatten(1);
  auto subj = d.blobs->tensor("subject").index_select(0, train);
  auto cls = d.blobs->tensor("class").index_select(0, train);
  REQUIRE(x.size(0) == 8 * 256);

  ProbeOptions po;
  po.seed = 1;

  SUBCASE("raw maps identify the subject") {
    auto r = linear_probe(x, subj, po);
    CHECK(r.accuracy >= 0.95);
  }
  SUBCASE("mean-pooled vision targets identify the class") {
    auto pooled = d.blobs->tensor("f_y").index_select(0, train).mean(1);
    auto r = linear_probe(pooled, cls, po);
    CHECK(r.accuracy >= 0.99);
  }
  SUBCASE("shared templates identify the class") {
    SynthWorld world(cfg);
    std::vector<torch::Tensor> rows;
    std::vector<int64_t> labels;
    std::mt19937_64 rng(21);
    for (int i = 0; i < 1024; ++i) {
      int c = i % cfg.classes;
      rows.push_back(as_row(world.neural_template(world.draw_factor(c, rng))));
      labels.push_back(c);
    }
    auto r = linear_probe(torch::cat(rows), torch::tensor(labels, torch::kInt64), po);
    CHECK(r.accuracy >= 0.99);
  }
}
