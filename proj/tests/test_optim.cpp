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

#include "zsd/optim.hpp"

using namespace zsd;

namespace {

std::vector<std::pair<std::string, torch::Tensor>> named(const std::vector<torch::Tensor>& ps) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.emplace_back("p" + std::to_string(i), ps[i]);
  return out;
}

torch::Tensor quadratic(const std::vector<torch::Tensor>& ps, const torch::Tensor& target) {
  auto loss = torch::zeros({});
  for (auto& p : ps) loss = loss + (p - target.slice(0, 0, p.size(0))).pow(4).sum();
  return loss;
}

}  // namespace

TEST_CASE("AdamW: tracks libtorch AdamW step for step at fixed beta1") {
  torch::manual_seed(0);
  auto target = torch::randn({6});
  std::vector<torch::Tensor> mine{torch::randn({6}).requires_grad_(true), torch::randn({3}).requires_grad_(true)};
  std::vector<torch::Tensor> ref{mine[0].detach().clone().requires_grad_(true),
                                 mine[1].detach().clone().requires_grad_(true)};
  AdamW opt(named(mine), {.weight_decay = 0.05});
  torch::optim::AdamW torch_opt(ref, torch::optim::AdamWOptions(1e-2).betas({0.9, 0.999}).eps(1e-8).weight_decay(0.05));
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    quadratic(mine, target).backward();
    opt.step(1e-2, 0.9);
    torch_opt.zero_grad();
    quadratic(ref, target).backward();
    torch_opt.step();
  }
  for (std::size_t i = 0; i < mine.size(); ++i) CHECK(torch::allclose(mine[i], ref[i], 1e-5, 1e-6));
  CHECK(opt.steps() == 50);
}

TEST_CASE("AdamW: lr scale multiplies the first update of matching parameters") {
  auto a = torch::ones({4}).requires_grad_(true), b = torch::ones({4}).requires_grad_(true);
  AdamW opt({{"head.w", a}, {"body.w", b}}, {.weight_decay = 0.0});
  opt.set_lr_scale("head.", 0.5);
  (a.sum() + b.sum()).backward();
  opt.step(0.1, 0.9);
  // The first Adam step moves each element by lr (up to eps).
  CHECK(torch::allclose(b, torch::full({4}, 0.9f), 0, 1e-6));
  CHECK(torch::allclose(a, torch::full({4}, 0.95f), 0, 1e-6));
}

TEST_CASE("AdamW: state blobs restore the trajectory bit for bit") {
  torch::manual_seed(1);
  auto target = torch::randn({5});
  auto make = [] { return std::vector<torch::Tensor>{torch::zeros({5}).requires_grad_(true)}; };
  auto a = make(), b = make();
  AdamW oa(named(a), {}), ob(named(b), {});
  for (int s = 0; s < 5; ++s) {
    oa.zero_grad();
    quadratic(a, target).backward();
    oa.step(1e-2, 0.9);
  }
  {
    torch::NoGradGuard ng;
    b[0].copy_(a[0]);
  }
  ob.load_state(oa.state_blobs("main."), "main.");
  CHECK(ob.steps() == 5);
  for (int s = 0; s < 5; ++s) {
    for (auto* o : {&oa, &ob}) o->zero_grad();
    quadratic(a, target).backward();
    quadratic(b, target).backward();
    oa.step(1e-2, 0.9);
    ob.step(1e-2, 0.9);
  }
  CHECK(torch::equal(a[0], b[0]));
}

TEST_CASE("OneCycle: matches the reference one-cycle values") {
  OneCycle sched{1e-3, 100};
  // Reference values of the cosine one-cycle policy with the same settings.
  struct Point {
    int64_t step;
    double lr, beta1;
  };
  for (auto [step, lr, beta1] : std::vector<Point>{{0, 3.9999999999999996e-05, 0.95},
                                                   {1, 4.281378056590743e-05, 0.9497068978577179},
                                                   {15, 0.0005459866761210004, 0.897293054570729},
                                                   {29, 0.001, 0.85},
                                                   {30, 0.0009994965352845243, 0.8500503466729342},
                                                   {50, 0.0007938934505757319, 0.8706107373853763},
                                                   {99, 4e-09, 0.95}}) {
    CHECK(sched.lr(step) == doctest::Approx(lr).epsilon(1e-9));
    CHECK(sched.beta1(step) == doctest::Approx(beta1).epsilon(1e-9));
  }
}

TEST_CASE("clip_grad_norm: returns the pre-clip norm and rescales only above the limit") {
  auto a = torch::zeros({2}).requires_grad_(true), b = torch::zeros({1}).requires_grad_(true);
  (a * torch::tensor({3.0f, 0.0f})).sum().backward();
  (b * 4.0f).sum().backward();
  CHECK(clip_grad_norm({a, b}, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0].item<float>() == 3.0f);
  CHECK(clip_grad_norm({a, b}, 1.0) == doctest::Approx(5.0));
  double after = std::sqrt(a.grad().pow(2).sum().item<double>() + b.grad().pow(2).sum().item<double>());
  CHECK(after == doctest::Approx(1.0).epsilon(1e-5));
}
