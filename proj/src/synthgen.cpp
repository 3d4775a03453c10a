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

#include "zsd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "zsd/error.hpp"

namespace zsd {

namespace {

constexpr double kPi = std::numbers::pi;

// Stream tags for mix_seed so that unrelated draws never share a sequence.
enum Stream : std::uint64_t {
  kSignature = 11,
  kVisionMap = 12,
  kTextMap = 13,
  kOperator = 14,
  kTrainFactor = 15,
  kTestFactor = 16,
  kNoise = 17,
};

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Standard normal via Box-Muller on raw 53-bit uniforms. std::normal_distribution
// is implementation-defined; this keeps datasets identical across standard libraries.
double normal(std::mt19937_64& rng) {
  auto u01 = [&] { return (double(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0); };
  double u1 = u01(), u2 = u01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

double uniform(std::mt19937_64& rng) { return double(rng() >> 11) * (1.0 / 9007199254740992.0); }

// Sum of six low-frequency plane waves, scaled to max |value| = 1 on the grid.
Map2D smooth_field(int h, int w, std::mt19937_64& rng) {
  Map2D f(h, w);
  for (int m = 0; m < 6; ++m) {
    int kr = 0, kc = 0;
    while (kr == 0 && kc == 0) {
      kr = int(rng() % 5) - 2;
      kc = int(rng() % 5) - 2;
    }
    double amp = normal(rng);
    double phase = 2.0 * kPi * uniform(rng);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        f.at(r, c) += float(amp * std::cos(2.0 * kPi * (kr * double(r) / h + kc * double(c) / w) + phase));
  }
  float peak = 0.0f;
  for (float v : f.data) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f)
    for (float& v : f.data) v /= peak;
  return f;
}

Map2D gaussian_blur(const Map2D& in, double sigma) {
  int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  Map2D tmp(in.height, in.width), out(in.height, in.width);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in.at(r, std::clamp(c + i, 0, in.width - 1));
      tmp.at(r, c) = float(acc);
    }
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(std::clamp(r + i, 0, in.height - 1), c);
      out.at(r, c) = float(acc);
    }
  return out;
}

double box_sdf(double x, double y, double hx, double hy) {
  double dx = std::abs(x) - hx, dy = std::abs(y) - hy;
  double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dx, dy), 0.0);
}

double triangle_sdf(double x, double y, double r) {
  const double k = std::sqrt(3.0);
  x = std::abs(x) - r;
  y = -y + r / k;
  if (x + k * y > 0.0) {
    double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
    x = nx;
    y = ny;
  }
  x -= std::clamp(x, -2.0 * r, 0.0);
  return -std::sqrt(x * x + y * y) * (y < 0.0 ? -1.0 : 1.0);
}

// Signed distance (negative inside) of the canonical shape of a family, in
// local coordinates spanning roughly [-1, 1].
double family_sdf(int family, double x, double y) {
  switch (family) {
    case 0: return std::hypot(x, y) - 0.45;
    case 1: return box_sdf(x, y, 0.6, 0.15);
    case 2: return std::abs(std::hypot(x, y) - 0.42) - 0.1;
    case 3: {
      double a = 2.0 * kPi / 0.55;
      double cell = std::sin(a * x) * std::sin(a * y) > 0.0 ? -1.0 : 1.0;
      return std::max(box_sdf(x, y, 0.55, 0.55), cell * 0.05);
    }
    case 4: return std::min(box_sdf(x, y, 0.6, 0.13), box_sdf(x, y, 0.13, 0.6));
    case 5: return triangle_sdf(x, y, 0.55);
    case 6: return std::min(std::hypot(x - 0.38, y) - 0.2, std::hypot(x + 0.38, y) - 0.2);
    default: return std::abs(box_sdf(x, y, 0.45, 0.45)) - 0.08;
  }
}

}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t state = 0x2545f4914f6cdd1dULL;
  std::uint64_t out = 0;
  for (auto w : words) {
    state ^= w + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix(state);
  }
  return out;
}

float Map2D::sample(float r, float c) const {
  r = std::clamp(r, 0.0f, float(height - 1));
  c = std::clamp(c, 0.0f, float(width - 1));
  int r0 = int(std::floor(r)), c0 = int(std::floor(c));
  int r1 = std::min(r0 + 1, height - 1), c1 = std::min(c0 + 1, width - 1);
  float fr = r - float(r0), fc = c - float(c0);
  if (fr == 0.0f && fc == 0.0f) return at(r0, c0);
  float top = at(r0, c0) * (1.0f - fc) + at(r0, c1) * fc;
  float bot = at(r1, c0) * (1.0f - fc) + at(r1, c1) * fc;
  return top * (1.0f - fr) + bot * fr;
}

double Map2D::rms() const {
  if (data.empty()) return 0.0;
  double acc = 0.0;
  for (float v : data) acc += double(v) * v;
  return std::sqrt(acc / double(data.size()));
}

SubjectOperator SubjectOperator::identity(int64_t subject_id, int h, int w) {
  SubjectOperator op;
  op.subject_id = subject_id;
  op.gain = Map2D(h, w, 1.0f);
  op.shift_r = Map2D(h, w);
  op.shift_c = Map2D(h, w);
  op.bias = Map2D(h, w);
  return op;
}

double SubjectOperator::min_jacobian_det() const {
  double best = std::numeric_limits<double>::infinity();
  int h = shift_r.height, w = shift_r.width;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int ru = std::min(r + 1, h - 1), rd = std::max(r - 1, 0);
      int cu = std::min(c + 1, w - 1), cd = std::max(c - 1, 0);
      double drr = (shift_r.at(ru, c) - shift_r.at(rd, c)) / double(std::max(ru - rd, 1));
      double drc = (shift_r.at(r, cu) - shift_r.at(r, cd)) / double(std::max(cu - cd, 1));
      double dcr = (shift_c.at(ru, c) - shift_c.at(rd, c)) / double(std::max(ru - rd, 1));
      double dcc = (shift_c.at(r, cu) - shift_c.at(r, cd)) / double(std::max(cu - cd, 1));
      best = std::min(best, (1.0 + drr) * (1.0 + dcc) - drc * dcr);
    }
  return best;
}

float SubjectOperator::max_displacement() const {
  float m = 0.0f;
  for (std::size_t i = 0; i < shift_r.data.size(); ++i)
    m = std::max(m, std::hypot(shift_r.data[i], shift_c.data[i]));
  return m;
}

void SynthConfig::validate() const {
  if (subjects < 2) throw ConfigError("data.subjects must be >= 2");
  if (classes < 2) throw ConfigError("data.classes must be >= 2");
  if (train_per_subject < 1) throw ConfigError("data.train_per_subject must be >= 1");
  if (test_shared < 0) throw ConfigError("data.test_shared must be >= 0");
  if (height < 8 || width < 8) throw ConfigError("data.height/width must be >= 8");
  if (patch < 1 || height % patch || width % patch)
    throw ConfigError("data.patch must divide height and width");
  if (embed_dim < 1 || style_dim < 0) throw ConfigError("data.embed_dim/style_dim invalid");
  if (!(gain_strength >= 0.0f) || !(bias_strength >= 0.0f) || !(noise_sigma >= 0.0f))
    throw ConfigError("data operator strengths must be >= 0");
  if (!(warp_pixels >= 0.0f) || warp_pixels > width / 8.0f)
    throw ConfigError("data.warp_pixels must lie in [0, width/8]");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"subjects", c.subjects},         {"classes", c.classes},
          {"train_per_subject", c.train_per_subject}, {"test_shared", c.test_shared},
          {"height", c.height},             {"width", c.width},
          {"patch", c.patch},               {"embed_dim", c.embed_dim},
          {"style_dim", c.style_dim},       {"seed", c.seed},
          {"gain_strength", c.gain_strength}, {"warp_pixels", c.warp_pixels},
          {"bias_strength", c.bias_strength}, {"noise_sigma", c.noise_sigma}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "subjects") c.subjects = v.get<int>();
      else if (k == "classes") c.classes = v.get<int>();
      else if (k == "train_per_subject") c.train_per_subject = v.get<int>();
      else if (k == "test_shared") c.test_shared = v.get<int>();
      else if (k == "height") c.height = v.get<int>();
      else if (k == "width") c.width = v.get<int>();
      else if (k == "patch") c.patch = v.get<int>();
      else if (k == "embed_dim") c.embed_dim = v.get<int>();
      else if (k == "style_dim") c.style_dim = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "gain_strength") c.gain_strength = v.get<double>();
      else if (k == "warp_pixels") c.warp_pixels = v.get<double>();
      else if (k == "bias_strength") c.bias_strength = v.get<double>();
      else if (k == "noise_sigma") c.noise_sigma = v.get<double>();
      else throw ConfigError("unknown key data." + k);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for data." + k + ": " + e.what());
    }
  }
  return c;
}

SynthWorld::SynthWorld(SynthConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int h = cfg_.height, w = cfg_.width, k = cfg_.classes, d = cfg_.style_dim;
  const int l = cfg_.tokens(), c2 = cfg_.embed_dim;

  for (int c = 0; c < k; ++c) {
    std::mt19937_64 rng(mix_seed({cfg_.seed, kSignature, std::uint64_t(c)}));
    Map2D sig(h, w);
    for (int b = 0; b < 3; ++b) {
      double cr = (0.15 + 0.7 * uniform(rng)) * h, cc = (0.15 + 0.7 * uniform(rng)) * w;
      double sign = (rng() & 1) ? 1.0 : -1.0;
      double width2 = 2.0 * std::pow(0.12 * w, 2);
      for (int r = 0; r < h; ++r)
        for (int cx = 0; cx < w; ++cx)
          sig.at(r, cx) += float(sign * std::exp(-((r - cr) * (r - cr) + (cx - cc) * (cx - cc)) / width2));
    }
    signatures_.push_back(std::move(sig));
  }

  {
    std::mt19937_64 rng(mix_seed({cfg_.seed, kVisionMap}));
    vision_map_.resize(std::size_t(l) * c2 * (k + d));
    for (int row = 0; row < l * c2; ++row)
      for (int col = 0; col < k + d; ++col)
        vision_map_[std::size_t(row) * (k + d) + col] = float(normal(rng) * (col < k ? 1.0 : 0.35));
  }
  {
    std::mt19937_64 rng(mix_seed({cfg_.seed, kTextMap}));
    text_map_.resize(std::size_t(c2) * k);
    for (auto& v : text_map_) v = float(normal(rng));
  }
  for (int s = 1; s <= cfg_.subjects; ++s) operators_.push_back(make_operator(s));
}

SubjectOperator SynthWorld::make_operator(int64_t subject_id) const {
  std::mt19937_64 rng(mix_seed({cfg_.seed, kOperator, std::uint64_t(subject_id)}));
  const int h = cfg_.height, w = cfg_.width;
  SubjectOperator op;
  op.subject_id = subject_id;
  op.gain = smooth_field(h, w, rng);
  for (float& v : op.gain.data) v = std::exp(cfg_.gain_strength * v);
  op.shift_r = smooth_field(h, w, rng);
  op.shift_c = smooth_field(h, w, rng);
  for (float& v : op.shift_r.data) v *= cfg_.warp_pixels / std::sqrt(2.0f);
  for (float& v : op.shift_c.data) v *= cfg_.warp_pixels / std::sqrt(2.0f);
  // The oscillating part cancels over patch positions; the constant offset
  // is the part of the subject signal that survives token pooling.
  op.bias = smooth_field(h, w, rng);
  const float offset = float(normal(rng));
  for (float& v : op.bias.data) v = float(cfg_.bias_strength) * (v + offset);
  op.noise_sigma = float(cfg_.noise_sigma);
  if (op.min_jacobian_det() <= 0.0)
    throw ConfigError("subject " + std::to_string(subject_id) + " warp is not invertible; lower data.warp_pixels");
  return op;
}

const SubjectOperator& SynthWorld::subject(int64_t subject_id) const {
  if (subject_id < 1 || subject_id > int64_t(operators_.size()))
    throw std::out_of_range("unknown subject " + std::to_string(subject_id));
  return operators_[std::size_t(subject_id - 1)];
}

SemanticFactor SynthWorld::draw_factor(int64_t class_id, std::mt19937_64& rng) const {
  SemanticFactor f;
  f.class_id = class_id;
  f.style.resize(std::size_t(cfg_.style_dim));
  for (auto& v : f.style) v = float(normal(rng));
  return f;
}

Map2D SynthWorld::render_stimulus(const SemanticFactor& f) const {
  const int h = cfg_.height, w = cfg_.width;
  auto st = [&](int i) { return i < int(f.style.size()) ? double(f.style[std::size_t(i)]) : 0.0; };
  const double off_y = 0.04 * std::tanh(st(0)), off_x = 0.04 * std::tanh(st(1));
  const double scale = std::exp(0.08 * std::tanh(st(2)));
  const int family = int(f.class_id % 8);
  const double angle = 0.2 * std::tanh(st(3)) + (double(f.class_id / 8) * kPi / 16.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double edge = 1.0 / w;
  Map2D img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double py = (2.0 * (r + 0.5) / h - 1.0) - off_y;
      double px = (2.0 * (c + 0.5) / w - 1.0) - off_x;
      double lx = (ca * px + sa * py) / scale;
      double ly = (-sa * px + ca * py) / scale;
      double dist = family_sdf(family, lx, ly) * scale;
      img.at(r, c) = float(1.0 / (1.0 + std::exp(dist / edge)));
    }
  return img;
}

Map2D SynthWorld::neural_template(const SemanticFactor& f) const {
  Map2D t = gaussian_blur(render_stimulus(f), 2.0);
  const Map2D& sig = signatures_[std::size_t(f.class_id)];
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += 0.5f * sig.data[i];
  // Zero mean and unit RMS: the map mean is left to the subject bias.
  double mean = 0.0;
  for (float v : t.data) mean += v;
  mean /= double(t.data.size());
  for (float& v : t.data) v = float(v - mean);
  double rms = t.rms();
  if (rms > 0.0)
    for (float& v : t.data) v = float(v / rms);
  return t;
}

std::pair<std::vector<float>, std::vector<float>> SynthWorld::target_embeddings(const SemanticFactor& f) const {
  const int k = cfg_.classes, d = cfg_.style_dim, l = cfg_.tokens(), c2 = cfg_.embed_dim;
  std::vector<float> vision(std::size_t(l) * c2);
  for (int row = 0; row < l * c2; ++row) {
    const float* wrow = &vision_map_[std::size_t(row) * (k + d)];
    double acc = wrow[f.class_id];
    for (int j = 0; j < d; ++j) acc += double(wrow[k + j]) * f.style[std::size_t(j)];
    vision[std::size_t(row)] = float(std::tanh(acc));
  }
  for (int t = 0; t < l; ++t) {
    double n = 0.0;
    for (int j = 0; j < c2; ++j) n += double(vision[std::size_t(t) * c2 + j]) * vision[std::size_t(t) * c2 + j];
    n = std::sqrt(n);
    for (int j = 0; j < c2; ++j) vision[std::size_t(t) * c2 + j] = float(vision[std::size_t(t) * c2 + j] / n);
  }
  std::vector<float> text(static_cast<std::size_t>(c2));
  double n = 0.0;
  for (int j = 0; j < c2; ++j) {
    text[std::size_t(j)] = text_map_[std::size_t(j) * k + f.class_id];
    n += double(text[std::size_t(j)]) * text[std::size_t(j)];
  }
  n = std::sqrt(n);
  for (auto& v : text) v = float(v / n);
  return {std::move(vision), std::move(text)};
}

Map2D apply_subject(const Map2D& t, const SubjectOperator& op, std::mt19937_64& rng) {
  if (t.height != op.gain.height || t.width != op.gain.width)
    throw ShapeError("template and subject operator shapes differ");
  Map2D x(t.height, t.width);
  for (int r = 0; r < t.height; ++r)
    for (int c = 0; c < t.width; ++c) {
      float warped = t.sample(float(r) + op.shift_r.at(r, c), float(c) + op.shift_c.at(r, c));
      x.at(r, c) = warped * op.gain.at(r, c) + op.bias.at(r, c);
    }
  if (op.noise_sigma > 0.0f)
    for (float& v : x.data) v += float(op.noise_sigma * normal(rng));
  return x;
}

DatasetManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out) {
  SynthWorld world(cfg);
  const int s_count = cfg.subjects, h = cfg.height, w = cfg.width;
  const int l = cfg.tokens(), c2 = cfg.embed_dim, d = cfg.style_dim;
  const int64_t n = int64_t(s_count) * (cfg.train_per_subject + cfg.test_shared);

  std::vector<SemanticFactor> test_factors;
  std::vector<std::uint64_t> test_seeds;
  for (int j = 0; j < cfg.test_shared; ++j) {
    auto fs = mix_seed({cfg.seed, kTestFactor, std::uint64_t(j)});
    std::mt19937_64 rng(fs);
    test_factors.push_back(world.draw_factor(j % cfg.classes, rng));
    test_seeds.push_back(fs);
  }

  std::vector<float> xs(std::size_t(n) * h * w), ys(std::size_t(n) * h * w);
  std::vector<float> fy(std::size_t(n) * l * c2), ft(std::size_t(n) * c2);
  std::vector<float> styles(std::size_t(n) * std::max(d, 1));
  std::vector<int64_t> subj(static_cast<std::size_t>(n)), cls(static_cast<std::size_t>(n));

  DatasetManifest m;
  m.classes = cfg.classes;
  for (int s = 1; s <= s_count; ++s) m.subjects.push_back(s);
  m.generator = to_json(cfg);
  auto& train = m.splits["train"];
  auto& test = m.splits["test"];

  int64_t row = 0;
  for (int s = 1; s <= s_count; ++s) {
    const auto& op = world.subject(s);
    auto op_seed = mix_seed({cfg.seed, kOperator, std::uint64_t(s)});
    for (int i = 0; i < cfg.train_per_subject + cfg.test_shared; ++i, ++row) {
      bool is_train = i < cfg.train_per_subject;
      SemanticFactor f;
      std::uint64_t fs;
      if (is_train) {
        fs = mix_seed({cfg.seed, kTrainFactor, std::uint64_t(s), std::uint64_t(i)});
        std::mt19937_64 rng(fs);
        f = world.draw_factor(i % cfg.classes, rng);
      } else {
        f = test_factors[std::size_t(i - cfg.train_per_subject)];
        fs = test_seeds[std::size_t(i - cfg.train_per_subject)];
      }
      std::mt19937_64 noise(mix_seed({cfg.seed, kNoise, std::uint64_t(s), std::uint64_t(i)}));
      auto x = apply_subject(world.neural_template(f), op, noise);
      auto y = world.render_stimulus(f);
      auto [v, t] = world.target_embeddings(f);
      std::memcpy(&xs[std::size_t(row) * h * w], x.data.data(), sizeof(float) * h * w);
      std::memcpy(&ys[std::size_t(row) * h * w], y.data.data(), sizeof(float) * h * w);
      std::memcpy(&fy[std::size_t(row) * l * c2], v.data(), sizeof(float) * l * c2);
      std::memcpy(&ft[std::size_t(row) * c2], t.data(), sizeof(float) * c2);
      for (int j = 0; j < d; ++j) styles[std::size_t(row) * d + j] = f.style[std::size_t(j)];
      subj[std::size_t(row)] = s;
      cls[std::size_t(row)] = f.class_id;

      SampleRecord rec;
      rec.sample_id = row;
      rec.subject_id = s;
      rec.class_id = f.class_id;
      rec.x = {"x", row};
      rec.y = {"y", row};
      rec.f_y = {"f_y", row};
      rec.f_y_text = {"f_y_text", row};
      rec.factor = {f.class_id, {"style", row}, fs, op_seed};
      m.samples.push_back(rec);
      (is_train ? train : test).push_back(row);
    }
  }

  auto make = [](std::string name, DType dt, std::vector<int64_t> shape, const void* src, std::size_t bytes) {
    TensorBlob b;
    b.name = std::move(name);
    b.dtype = dt;
    b.shape = std::move(shape);
    b.data.resize(bytes);
    if (bytes) std::memcpy(b.data.data(), src, bytes);
    return b;
  };
  std::vector<TensorBlob> blobs;
  if (n > 0) {
    blobs.push_back(make("x", DType::f32, {n, h, w}, xs.data(), xs.size() * 4));
    blobs.push_back(make("y", DType::f32, {n, h, w}, ys.data(), ys.size() * 4));
    blobs.push_back(make("f_y", DType::f32, {n, l, c2}, fy.data(), fy.size() * 4));
    blobs.push_back(make("f_y_text", DType::f32, {n, c2}, ft.data(), ft.size() * 4));
    blobs.push_back(make("style", DType::f32, {n, std::max(d, 1)}, styles.data(), styles.size() * 4));
    blobs.push_back(make("subject", DType::i64, {n}, subj.data(), subj.size() * 8));
    blobs.push_back(make("class", DType::i64, {n}, cls.data(), cls.size() * 8));
  }
  write_dataset(m, blobs, out);
  return read_dataset(out).manifest;
}

}  // namespace zsd
