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

#include "zsd/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>

#include "zsd/config.hpp"
#include "zsd/error.hpp"
#include "zsd/metrics.hpp"
#include "zsd/synthgen.hpp"
#include "zsd/trainer.hpp"

namespace zsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int64_t> epochs;
  std::optional<int64_t> held_out;
  std::optional<int64_t> train_subjects;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("-c,--config", f.file, "JSON run config");
  app->add_option("--set", f.sets, "Override section.key=value (repeatable)");
  app->add_option("--seed", f.seed, "Shortcut for train.seed");
  app->add_option("--epochs", f.epochs, "Shortcut for train.epochs");
  app->add_option("--held-out", f.held_out, "Shortcut for train.held_out_subject");
  app->add_option("--train-subjects", f.train_subjects, "Shortcut for train.num_train_subjects");
}

// default < file < flags
RunConfig resolve(const ConfigFlags& f) {
  RunConfig c;
  if (!f.file.empty()) {
    std::ifstream in(f.file);
    if (!in) throw ConfigError("cannot open config " + f.file);
    json j;
    try {
      j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
      throw ConfigError("malformed config " + f.file + ": " + e.what());
    }
    c = run_config_from_json(j);
  }
  for (const auto& s : f.sets) apply_override(c, s);
  if (f.seed) c.train.seed = *f.seed;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.held_out) c.train.held_out_subject = *f.held_out;
  if (f.train_subjects) c.train.num_train_subjects = *f.train_subjects;
  c.validate();
  return c;
}

void write_versions(const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "versions.json");
  out << json{{"zsd", kVersion}, {"dataset_format", kFormatVersion}, {"torch", TORCH_VERSION}}.dump(2) << "\n";
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + path.string());
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

// Ground truth | reconstruction, side by side, 8-bit grayscale.
void write_pair_pgm(const torch::Tensor& truth, const torch::Tensor& recon, const fs::path& path) {
  const int64_t h = truth.size(0), w = truth.size(1), gap = 2, W = 2 * w + gap;
  std::vector<unsigned char> px(std::size_t(h * W), 255);
  auto put = [&](const torch::Tensor& img, int64_t off) {
    auto a = img.to(torch::kFloat64).clamp(0, 1).contiguous();
    auto acc = a.accessor<double, 2>();
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) px[std::size_t(r * W + off + c)] = (unsigned char)std::lround(acc[r][c] * 255.0);
  };
  put(truth, 0);
  put(recon, w + gap);
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << W << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

void write_checkpoint_config(const LoadedModel& lm, const fs::path& out) {
  write_resolved_config(lm.config, out);
  write_versions(out);
}

int dispatch(CLI::App& app, int argc, const char* const* argv) {
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  ConfigFlags synth_flags;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_config_flags(synth, synth_flags);
  synth->add_option("-o,--out", synth_out, "Dataset directory")->required();

  ConfigFlags train_flags;
  std::string train_data, train_out, train_resume;
  int64_t train_stop = -1;
  bool train_verbose = false;
  auto* tr = app.add_subcommand("train", "Train on every subject except the held-out one");
  add_config_flags(tr, train_flags);
  tr->add_option("-d,--data", train_data, "Dataset directory")->required();
  tr->add_option("-o,--out", train_out, "Run directory")->required();
  tr->add_option("--resume", train_resume, "Checkpoint directory to resume from");
  tr->add_option("--max-steps", train_stop, "Stop (and checkpoint) after this optimizer step");
  tr->add_flag("-v,--verbose", train_verbose, "Progress on stderr");

  std::string ev_ckpt, ev_data, ev_out;
  std::optional<int64_t> ev_subject;
  bool ev_allow_seen = false, ev_no_probes = false;
  auto* ev = app.add_subcommand("eval", "Zero-shot evaluation on an unseen subject");
  ev->add_option("-k,--checkpoint", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("-d,--data", ev_data, "Dataset directory")->required();
  ev->add_option("-s,--subject", ev_subject, "Subject to evaluate (default: the held-out one)");
  ev->add_option("-o,--out", ev_out, "Output directory")->required();
  ev->add_flag("--allow-seen-subject", ev_allow_seen, "Permit evaluating a training subject");
  ev->add_flag("--no-probes", ev_no_probes, "Skip the linear probes");

  std::string pr_ckpt, pr_data, pr_out, pr_feature = "F_s", pr_target = "class";
  std::optional<int64_t> pr_subject;
  auto* pr = app.add_subcommand("probe", "Linear probe of one feature");
  pr->add_option("-k,--checkpoint", pr_ckpt, "Checkpoint directory")->required();
  pr->add_option("-d,--data", pr_data, "Dataset directory")->required();
  pr->add_option("-f,--feature", pr_feature, "E, E_i, E_s, F, F_s or F_i");
  pr->add_option("-t,--target", pr_target, "class or subject");
  pr->add_option("-s,--subject", pr_subject, "Evaluated subject (default: the held-out one)");
  pr->add_option("-o,--out", pr_out, "Output directory")->required();

  std::string rc_ckpt, rc_data, rc_out;
  std::vector<int64_t> rc_ids;
  std::optional<int64_t> rc_subject;
  auto* rc = app.add_subcommand("reconstruct", "Write ground truth | reconstruction images");
  rc->add_option("-k,--checkpoint", rc_ckpt, "Checkpoint directory")->required();
  rc->add_option("-d,--data", rc_data, "Dataset directory")->required();
  rc->add_option("--ids", rc_ids, "Sample ids (default: first 8 test samples of the subject)")->delimiter(',');
  rc->add_option("-s,--subject", rc_subject, "Subject for the default ids (default: the held-out one)");
  rc->add_option("-o,--out", rc_out, "Output directory")->required();

  std::string xp_ckpt, xp_data, xp_out, xp_feature = "E_i", xp_label = "subject";
  auto* xp = app.add_subcommand("export-proj", "PCA projection of a feature over every subject's test split");
  xp->add_option("-k,--checkpoint", xp_ckpt, "Checkpoint directory")->required();
  xp->add_option("-d,--data", xp_data, "Dataset directory")->required();
  xp->add_option("-f,--feature", xp_feature, "E, E_i, E_s, F, F_s or F_i");
  xp->add_option("-l,--label", xp_label, "subject or class")->check(CLI::IsMember({"subject", "class"}));
  xp->add_option("-o,--out", xp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (synth->parsed()) {
    auto cfg = resolve(synth_flags);
    auto m = generate_dataset(cfg.data, synth_out);
    write_resolved_config(cfg, synth_out);
    write_versions(synth_out);
    std::cout << json{{"dataset", synth_out}, {"samples", m.samples.size()}}.dump() << "\n";
  } else if (tr->parsed()) {
    auto cfg = resolve(train_flags);
    require_dir(train_data, "dataset");
    TrainOptions o;
    if (!train_resume.empty()) o.resume_from = train_resume;
    o.stop_after = train_stop;
    o.quiet = !train_verbose;
    write_versions(train_out);
    auto r = train(train_data, cfg, train_out, o);
    std::cout << json{{"checkpoint", r.checkpoint.string()}, {"steps", r.steps}, {"total_steps", r.total_steps}}.dump()
              << "\n";
  } else if (ev->parsed()) {
    require_dir(ev_ckpt, "checkpoint");
    require_dir(ev_data, "dataset");
    auto lm = load_model(ev_ckpt);
    int64_t subject = ev_subject.value_or(lm.config.train.held_out_subject);
    EvalOptions o;
    o.allow_seen_subject = ev_allow_seen;
    o.with_probes = !ev_no_probes;
    auto rep = zero_shot_eval(ev_ckpt, ev_data, subject, o);
    write_checkpoint_config(lm, ev_out);
    write_json(rep.to_json(), fs::path(ev_out) / "report.json");
    std::cout << json{{"report", (fs::path(ev_out) / "report.json").string()}, {"pixcorr", rep.pixcorr},
                      {"ssim", rep.ssim}}
                     .dump()
              << "\n";
  } else if (pr->parsed()) {
    require_dir(pr_ckpt, "checkpoint");
    require_dir(pr_data, "dataset");
    auto lm = load_model(pr_ckpt);
    auto data = read_dataset(pr_data);
    int64_t subject = pr_subject.value_or(lm.config.train.held_out_subject);
    auto r = probe_feature(lm, data, subject, pr_feature, pr_target);
    json j = {{"feature", pr_feature}, {"target", pr_target}, {"subject", subject}, {"accuracy", r.accuracy},
              {"chance", r.chance},    {"n_train", r.n_train},  {"n_test", r.n_test}};
    write_checkpoint_config(lm, pr_out);
    write_json(j, fs::path(pr_out) / ("probe_" + pr_feature + "_" + pr_target + ".json"));
    std::cout << j.dump() << "\n";
  } else if (rc->parsed()) {
    require_dir(rc_ckpt, "checkpoint");
    require_dir(rc_data, "dataset");
    auto lm = load_model(rc_ckpt);
    auto data = read_dataset(rc_data);
    if (rc_ids.empty()) {
      int64_t subject = rc_subject.value_or(lm.config.train.held_out_subject);
      rc_ids = split_samples(data.manifest, "test", {subject});
      if (rc_ids.size() > 8) rc_ids.resize(8);
    }
    torch::NoGradGuard no_grad;
    auto sf = features_for(lm, data, rc_ids);
    auto recon = decode_image(lm.model->toy_decoder, sf.features.f_pred);
    fs::create_directories(rc_out);
    json files = json::array();
    for (std::size_t i = 0; i < rc_ids.size(); ++i) {
      auto path = fs::path(rc_out) / ("sample_" + std::to_string(rc_ids[i]) + ".pgm");
      write_pair_pgm(sf.y[int64_t(i)], recon[int64_t(i)], path);
      files.push_back(path.string());
    }
    write_checkpoint_config(lm, rc_out);
    std::cout << json{{"images", files}}.dump() << "\n";
  } else if (xp->parsed()) {
    require_dir(xp_ckpt, "checkpoint");
    require_dir(xp_data, "dataset");
    auto lm = load_model(xp_ckpt);
    auto data = read_dataset(xp_data);
    torch::NoGradGuard no_grad;
    auto sf = features_for(lm, data, split_samples(data.manifest, "test", data.manifest.subjects));
    auto feats = feature_matrix(sf.features, xp_feature);
    auto labels = xp_label == "subject" ? sf.subject_id : sf.label;
    auto base = fs::path(xp_out) / ("proj_" + xp_feature + "_" + xp_label);
    projection_export(feats, labels, base);
    write_checkpoint_config(lm, xp_out);
    std::cout << json{{"csv", base.string() + ".csv"}, {"image", base.string() + ".ppm"}}.dump() << "\n";
  }
  return kExitOk;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Zero-shot cross-subject brain decoding on synthetic maps", "zsd"};
  auto fail = [](const char* kind, const std::exception& e, int code) {
    std::cerr << "zsd: error[" << kind << "]: " << one_line(e.what()) << "\n";
    return code;
  };
  try {
    return dispatch(app, argc, argv);
  } catch (const ConfigError& e) {
    return fail("config", e, kExitConfig);
  } catch (const ProtocolError& e) {
    return fail("protocol", e, kExitData);
  } catch (const DataError& e) {
    return fail("data", e, kExitData);
  } catch (const TrainingAbort& e) {
    return fail("abort", e, kExitAbort);
  } catch (const std::exception& e) {
    return fail("usage", e, kExitUsage);
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("zsd");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

}  // namespace zsd
