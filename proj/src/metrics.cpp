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

#include "zsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "zsd/error.hpp"

namespace zsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

torch::Tensor as_rows(const torch::Tensor& t) {
  if (t.dim() < 1) throw ShapeError("expected at least one axis");
  return t.detach().to(torch::kCPU, torch::kFloat64).reshape({t.size(0), -1}).contiguous();
}

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": shape mismatch");
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty input");
}

// Centered rows scaled to unit norm; a constant row becomes all zeros and is
// flagged.
torch::Tensor unit_rows(const torch::Tensor& rows, std::vector<bool>& constant) {
  auto c = rows - rows.mean(1, true);
  auto n = c.norm(2, 1, true);
  constant.resize(rows.size(0));
  auto na = n.accessor<double, 2>();
  for (int64_t i = 0; i < rows.size(0); ++i) constant[i] = !(na[i][0] > 1e-12);
  return c / n.clamp_min(1e-12);
}

std::vector<double> gaussian_window() {
  std::vector<double> g(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of an h x w map.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h, int64_t w, const std::vector<double>& g) {
  const int64_t k = int64_t(g.size());
  const int64_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(std::size_t(h * ow));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) s += g[j] * img[r * w + c + j];
      tmp[r * ow + c] = s;
    }
  std::vector<double> out(std::size_t(oh * ow));
  for (int64_t r = 0; r < oh; ++r)
    for (int64_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) s += g[j] * tmp[(r + j) * ow + c];
      out[r * ow + c] = s;
    }
  return out;
}

torch::Tensor standardize_with(const torch::Tensor& x, const torch::Tensor& mean, const torch::Tensor& sd) {
  return (x - mean) / sd;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: size mismatch");
  const double n = double(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nan("");
  // Symmetric in (a, b); identical inputs give exactly 1 since sqrt(s * s) == s.
  double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

PixcorrResult pixcorr(const torch::Tensor& pred, const torch::Tensor& target) {
  check_same(pred, target, "pixcorr");
  auto p = as_rows(pred), t = as_rows(target);
  PixcorrResult out;
  double sum = 0.0;
  const int64_t d = p.size(1);
  for (int64_t i = 0; i < p.size(0); ++i) {
    std::span<const double> a(p.data_ptr<double>() + i * d, d), b(t.data_ptr<double>() + i * d, d);
    double r = pearson(a, b);
    out.per_pair.push_back(r);
    if (std::isnan(r)) {
      ++out.skipped;
    } else {
      sum += r;
    }
  }
  int64_t used = p.size(0) - out.skipped;
  if (used == 0) throw std::domain_error("pixcorr: every pair has a constant image");
  out.mean = sum / double(used);
  return out;
}

double ssim_image(std::span<const double> a, std::span<const double> b, int64_t h, int64_t w) {
  if (h < 11 || w < 11) throw ShapeError("ssim: images must be at least 11 x 11");
  if (int64_t(a.size()) != h * w || a.size() != b.size()) throw ShapeError("ssim: size mismatch");
  static const std::vector<double> g = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end()), xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
  auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
    double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    total += num / den;
  }
  return total / double(mx.size());
}

SsimResult ssim(const torch::Tensor& pred, const torch::Tensor& target) {
  check_same(pred, target, "ssim");
  auto p = pred.dim() == 2 ? pred.unsqueeze(0) : pred;
  auto t = target.dim() == 2 ? target.unsqueeze(0) : target;
  if (p.dim() != 3) throw ShapeError("ssim: expected B x H x W");
  const int64_t h = p.size(1), w = p.size(2);
  auto pr = as_rows(p), tr = as_rows(t);
  SsimResult out;
  for (int64_t i = 0; i < pr.size(0); ++i) {
    std::span<const double> a(pr.data_ptr<double>() + i * h * w, h * w), b(tr.data_ptr<double>() + i * h * w, h * w);
    out.per_image.push_back(ssim_image(a, b, h, w));
  }
  out.mean = std::accumulate(out.per_image.begin(), out.per_image.end(), 0.0) / double(out.per_image.size());
  return out;
}

TwoWayResult two_way_identification(const torch::Tensor& pred, const torch::Tensor& truth) {
  check_same(pred, truth, "two_way_identification");
  if (pred.size(0) < 2) throw ShapeError("two_way_identification: need at least two rows");
  std::vector<bool> cp, ct;
  auto zp = unit_rows(as_rows(pred), cp), zt = unit_rows(as_rows(truth), ct);
  auto corr = torch::matmul(zp, zt.t());
  auto c = corr.accessor<double, 2>();
  const int64_t n = pred.size(0);
  std::vector<bool> skip(n);
  TwoWayResult out;
  for (int64_t i = 0; i < n; ++i) {
    skip[i] = cp[i] || ct[i];
    out.skipped_rows += skip[i];
  }
  int64_t wins = 0, pairs = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (skip[i]) continue;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i || skip[j]) continue;
      ++pairs;
      wins += c[i][i] > c[i][j];
    }
  }
  if (pairs == 0) throw std::domain_error("two_way_identification: no usable pairs");
  out.fraction = double(wins) / double(pairs);
  return out;
}

ProbeResult linear_probe(const torch::Tensor& fit_features, const torch::Tensor& fit_labels,
                         const torch::Tensor& eval_features, const torch::Tensor& eval_labels,
                         const ProbeOptions& opts) {
  auto xf = as_rows(fit_features), xe = as_rows(eval_features);
  auto yf = fit_labels.to(torch::kInt64).reshape({-1}), ye = eval_labels.to(torch::kInt64).reshape({-1});
  if (xf.size(0) != yf.size(0) || xe.size(0) != ye.size(0)) throw ShapeError("linear_probe: label count mismatch");
  if (xf.size(1) != xe.size(1)) throw ShapeError("linear_probe: feature width mismatch");
  if (xe.size(0) == 0) throw ShapeError("linear_probe: empty evaluation set");

  // Remap labels to 0..K-1 over the union.
  auto all = std::get<0>(torch::_unique(torch::cat({yf, ye}), true));
  if (std::get<0>(torch::_unique(yf)).numel() < 2)
    throw std::invalid_argument("linear_probe: fit labels contain fewer than two classes");
  auto remap = [&](const torch::Tensor& y) { return torch::searchsorted(all, y); };
  auto tf = remap(yf), te = remap(ye);
  const int64_t k = all.numel();

  auto mean = xf.mean(0, true);
  auto sd = xf.std(0, false, true).clamp_min(1e-6);
  auto zf = standardize_with(xf, mean, sd), ze = standardize_with(xe, mean, sd);

  torch::NoGradGuard outer_guard;
  auto w = torch::zeros({zf.size(1), k}, torch::kFloat64);
  auto b = torch::zeros({k}, torch::kFloat64);
  auto mw = torch::zeros_like(w), vw = torch::zeros_like(w), mb = torch::zeros_like(b), vb = torch::zeros_like(b);
  auto onehot = torch::one_hot(tf, k).to(torch::kFloat64);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double n = double(zf.size(0));
  // Full-batch Adam on the convex objective; the gradient is written out
  // by hand so the probe needs no autograd state.
  for (int64_t it = 1; it <= opts.iters; ++it) {
    auto prob = torch::softmax(torch::addmm(b, zf, w), 1);
    auto diff = (prob - onehot) / n;
    auto gw = torch::matmul(zf.t(), diff) + opts.l2 * w;
    auto gb = diff.sum(0);
    mw.mul_(b1).add_(gw, 1 - b1);
    vw.mul_(b2).addcmul_(gw, gw, 1 - b2);
    mb.mul_(b1).add_(gb, 1 - b1);
    vb.mul_(b2).addcmul_(gb, gb, 1 - b2);
    double c1 = 1 - std::pow(b1, double(it)), c2 = 1 - std::pow(b2, double(it));
    w.addcdiv_(mw / c1, (vw / c2).sqrt() + eps, -lr);
    b.addcdiv_(mb / c1, (vb / c2).sqrt() + eps, -lr);
  }
  auto pred = torch::addmm(b, ze, w).argmax(1);
  ProbeResult out;
  out.accuracy = pred.eq(te).to(torch::kFloat64).mean().item<double>();
  out.chance = torch::bincount(te, {}, k).max().item<double>() / double(te.numel());
  out.n_train = zf.size(0);
  out.n_test = ze.size(0);
  return out;
}

ProbeResult linear_probe(const torch::Tensor& features, const torch::Tensor& labels, const ProbeOptions& opts) {
  const int64_t n = features.size(0);
  if (labels.numel() != n) throw ShapeError("linear_probe: label count mismatch");
  int64_t n_test = std::clamp<int64_t>(int64_t(std::llround(opts.test_fraction * double(n))), 1, n - 1);
  if (n < 2) throw ShapeError("linear_probe: need at least two samples");
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto idx = torch::tensor(order, torch::kInt64);
  auto test_idx = idx.slice(0, 0, n_test), fit_idx = idx.slice(0, n_test);
  auto x = features.detach().reshape({n, -1});
  auto y = labels.reshape({-1}).to(torch::kInt64);
  return linear_probe(x.index_select(0, fit_idx), y.index_select(0, fit_idx), x.index_select(0, test_idx),
                      y.index_select(0, test_idx), opts);
}

double mixing_score(const torch::Tensor& features, const torch::Tensor& subjects, const ProbeOptions& opts) {
  auto r = linear_probe(features, subjects, opts);
  return r.accuracy - r.chance;
}

Projection pca2(const torch::Tensor& features) {
  auto x = as_rows(features);
  if (x.size(0) < 1) throw ShapeError("pca2: empty input");
  auto c = x - x.mean(0, true);
  Projection out;
  out.coords.assign(x.size(0), {0.0, 0.0});
  for (auto& comp : out.components) comp.assign(x.size(1), 0.0);
  if (!(c.abs().max().item<double>() > 1e-12)) return out;
  auto svd = torch::linalg_svd(c, false);
  auto vh = std::get<2>(svd);
  const int64_t m = std::min<int64_t>(2, vh.size(0));
  for (int64_t k = 0; k < m; ++k) {
    auto v = vh[k].clone();
    // Sign convention: largest-magnitude loading is positive.
    if (v[v.abs().argmax()].item<double>() < 0) v = -v;
    auto proj = torch::matmul(c, v);
    auto pa = proj.accessor<double, 1>();
    for (int64_t i = 0; i < x.size(0); ++i) out.coords[i][k] = pa[i];
    out.components[k] = to_vector(v);
  }
  return out;
}

Projection projection_export(const torch::Tensor& features, const torch::Tensor& labels, const fs::path& out) {
  auto proj = pca2(features);
  auto lab = labels.to(torch::kInt64).reshape({-1}).contiguous();
  if (lab.numel() != int64_t(proj.coords.size())) throw ShapeError("projection_export: label count mismatch");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto csv_path = out;
  csv_path += ".csv";
  std::ofstream csv(csv_path);
  csv << "id,pc1,pc2,label\n";
  csv.precision(9);
  for (std::size_t i = 0; i < proj.coords.size(); ++i)
    csv << i << "," << proj.coords[i][0] << "," << proj.coords[i][1] << "," << lab[i].item<int64_t>() << "\n";
  if (!csv) throw DataError("cannot write " + csv_path.string());

  constexpr int kSize = 256, kMargin = 12;
  std::vector<unsigned char> rgb(kSize * kSize * 3, 255);
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto& p : proj.coords)
    for (int k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  static const unsigned char palette[10][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                               {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                               {188, 189, 34},  {23, 190, 207}};
  for (std::size_t i = 0; i < proj.coords.size(); ++i) {
    int px[2];
    for (int k = 0; k < 2; ++k) {
      double span = hi[k] - lo[k];
      double u = span > 0 ? (proj.coords[i][k] - lo[k]) / span : 0.5;
      px[k] = kMargin + int(std::lround(u * (kSize - 2 * kMargin - 1)));
    }
    const auto* col = palette[std::size_t(((lab[i].item<int64_t>() % 10) + 10) % 10)];
    for (int dr = -2; dr <= 2; ++dr)
      for (int dc = -2; dc <= 2; ++dc) {
        int r = kSize - 1 - (px[1] + dr), c = px[0] + dc;
        if (r < 0 || r >= kSize || c < 0 || c >= kSize) continue;
        for (int ch = 0; ch < 3; ++ch) rgb[(std::size_t(r) * kSize + c) * 3 + ch] = col[ch];
      }
  }
  auto ppm_path = out;
  ppm_path += ".ppm";
  std::ofstream ppm(ppm_path, std::ios::binary);
  ppm << "P6\n" << kSize << " " << kSize << "\n255\n";
  ppm.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
  if (!ppm) throw DataError("cannot write " + ppm_path.string());
  return proj;
}

double paired_permutation_pvalue(std::span<const double> a, std::span<const double> b, int64_t permutations,
                                 std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("paired test: size mismatch");
  if (permutations < 1) throw std::invalid_argument("paired test: permutations must be >= 1");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double observed = std::accumulate(d.begin(), d.end(), 0.0);
  std::mt19937_64 rng(seed);
  int64_t extreme = 0;
  for (int64_t p = 0; p < permutations; ++p) {
    double s = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 64 == 0) bits = rng();
      s += (bits & 1) ? d[i] : -d[i];
      bits >>= 1;
    }
    extreme += s >= observed - 1e-12 * std::abs(observed);
  }
  return double(extreme + 1) / double(permutations + 1);
}

std::array<double, 2> bootstrap_ci(std::span<const double> values, int64_t reps, std::uint64_t seed) {
  if (values.empty()) throw ShapeError("bootstrap_ci: empty input");
  if (reps < 1) {
    double m = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    return {m, m};
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(reps);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / double(values.size());
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) {
    double pos = q * double(reps - 1);
    auto lo = std::size_t(std::floor(pos));
    auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - double(lo)) * (means[hi] - means[lo]);
  };
  return {at(0.025), at(0.975)};
}

const std::vector<std::string>& MetricsReport::keys() {
  static const std::vector<std::string> k = {"subject",       "pixcorr",          "ssim",
                                             "two_way_ident", "two_way_ident_decoder", "pixcorr_ci",
                                             "ssim_ci",       "controls",         "probe_results",
                                             "n_samples",     "n_skipped",        "seed"};
  return k;
}

json MetricsReport::to_json() const {
  json probes = json::object();
  for (const auto& [name, rec] : probe_results)
    probes[name] = {{"target", rec.target},
                    {"accuracy", rec.result.accuracy},
                    {"chance", rec.result.chance},
                    {"n_train", rec.result.n_train},
                    {"n_test", rec.result.n_test}};
  return {{"subject", subject},
          {"pixcorr", pixcorr},
          {"ssim", ssim},
          {"two_way_ident", two_way_ident},
          {"two_way_ident_decoder", two_way_ident_decoder},
          {"pixcorr_ci", pixcorr_ci},
          {"ssim_ci", ssim_ci},
          {"controls",
           {{"pixcorr_shuffled", pixcorr_shuffled},
            {"pixcorr_mean_image", pixcorr_mean_image},
            {"p_vs_shuffled", p_vs_shuffled},
            {"p_vs_mean_image", p_vs_mean_image}}},
          {"probe_results", probes},
          {"n_samples", n_samples},
          {"n_skipped", n_skipped},
          {"seed", seed}};
}

}  // namespace zsd
