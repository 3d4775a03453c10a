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

#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>

#include <torch/torch.h>

namespace zsd::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "zsd") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Max relative error between autograd and central differences of a scalar
// function, over every element of every tensor in `params` (f64 expected).
// Autograd is expected to equal grad_scale times the numerical derivative.
inline double fd_max_rel_error(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& params,
                               double eps = 1e-6, int64_t max_probes = 40, double grad_scale = 1.0) {
  for (auto& p : params)
    if (p.grad().defined()) p.grad().zero_();
  auto loss = f();
  loss.backward();
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (const auto& p : params) {
    auto g = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.view({-1});
    auto gflat = g.view({-1});
    const int64_t n = flat.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_probes);
    for (int64_t i = 0; i < n; i += stride) {
      double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      double up = f().item<double>();
      flat[i] = orig - eps;
      double down = f().item<double>();
      flat[i] = orig;
      double fd = grad_scale * (up - down) / (2 * eps);
      double ag = gflat[i].item<double>();
      double denom = std::max({std::abs(fd), std::abs(ag), 1e-4});
      worst = std::max(worst, std::abs(fd - ag) / denom);
    }
  }
  return worst;
}

}  // namespace zsd::test
