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

#include "zsd/config.hpp"

#include <fstream>
#include <variant>

#include "zsd/error.hpp"

namespace zsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using FieldRef = std::variant<int*, int64_t*, std::uint64_t*, double*, bool*, std::string*>;

struct Field {
  const char* key;
  FieldRef ref;
};

struct Section {
  const char* name;
  std::vector<Field> fields;
};

std::vector<Section> bind(RunConfig& c) {
  auto& d = c.data;
  auto& m = c.model;
  auto& t = c.train;
  auto& k = c.contrastive;
  auto& e = c.eval;
  auto& a = c.ablation;
  return {
      {"data",
       {{"subjects", &d.subjects},
        {"classes", &d.classes},
        {"train_per_subject", &d.train_per_subject},
        {"test_shared", &d.test_shared},
        {"height", &d.height},
        {"width", &d.width},
        {"patch", &d.patch},
        {"embed_dim", &d.embed_dim},
        {"style_dim", &d.style_dim},
        {"seed", &d.seed},
        {"gain_strength", &d.gain_strength},
        {"warp_pixels", &d.warp_pixels},
        {"bias_strength", &d.bias_strength},
        {"noise_sigma", &d.noise_sigma}}},
      {"model",
       {{"brain_dim", &m.brain_dim},
        {"heads", &m.heads},
        {"encoder_depth", &m.encoder_depth},
        {"invariant_depth", &m.invariant_depth},
        {"projector_hidden", &m.projector_hidden},
        {"head_hidden", &m.head_hidden},
        {"decoder_channels", &m.decoder_channels},
        {"prior_noise_conditioned", &m.prior.noise_conditioned},
        {"prior_steps", &m.prior.steps},
        {"prior_hidden", &m.prior.hidden},
        {"prior_depth", &m.prior.depth},
        {"prior_condition", &m.prior_condition}}},
      {"train",
       {{"epochs", &t.epochs},
        {"batch_size", &t.batch_size},
        {"lr", &t.lr},
        {"weight_decay", &t.weight_decay},
        {"decoder_lr", &t.decoder_lr},
        {"lambda_prior", &t.lambda_prior},
        {"weight_rec", &t.weights.rec},
        {"weight_dis", &t.weights.dis},
        {"weight_cls", &t.weights.cls},
        {"weight_inv", &t.weights.inv},
        {"weight_spe", &t.weights.spe},
        {"weight_sem", &t.weights.sem},
        {"grl_scale", &t.grl_scale},
        {"grl_warmup", &t.grl_warmup},
        {"adversary_lr_scale", &t.adversary_lr_scale},
        {"clip_norm", &t.clip_norm},
        {"seed", &t.seed},
        {"held_out_subject", &t.held_out_subject},
        {"num_train_subjects", &t.num_train_subjects},
        {"checkpoint_every", &t.checkpoint_every},
        {"deterministic", &t.deterministic}}},
      {"contrastive",
       {{"temperature", &k.temperature},
        {"mixco_alpha", &k.mixco_alpha},
        {"mix_probability", &k.mix_probability},
        {"mix_off_fraction", &k.mix_off_fraction}}},
      {"eval",
       {{"probe_fit_max", &e.probe_fit_max},
        {"probe_iters", &e.probe_iters},
        {"probe_l2", &e.probe_l2},
        {"probe_test_fraction", &e.probe_test_fraction},
        {"bootstrap", &e.bootstrap},
        {"permutations", &e.permutations},
        {"seed", &e.seed}}},
      {"ablation",
       {{"sife_adv", &a.sife_adv},
        {"sife_anchor", &a.sife_anchor},
        {"ssfe_adv", &a.ssfe_adv},
        {"ssfe_anchor", &a.ssfe_anchor}}},
  };
}

json read_field(const FieldRef& ref) {
  return std::visit([](auto* p) { return json(*p); }, ref);
}

void write_field(const FieldRef& ref, const json& v, const std::string& path) {
  try {
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("expected boolean for " + path);
          } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("expected string for " + path);
          } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("expected number for " + path);
          } else {
            if (!v.is_number_integer()) throw ConfigError("expected integer for " + path);
            if constexpr (std::is_unsigned_v<T>)
              if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0)
                throw ConfigError("expected non-negative integer for " + path);
          }
          *p = v.get<T>();
        },
        ref);
  } catch (const json::exception& e) {
    throw ConfigError("bad value for " + path + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    data.validate();
  } catch (const ConfigError&) {
    throw;
  }
  if (model.brain_dim <= 0 || model.brain_dim % model.heads != 0)
    throw ConfigError("model.brain_dim must be positive and divisible by model.heads");
  if (model.heads <= 0) throw ConfigError("model.heads must be positive");
  if (model.encoder_depth < 1 || model.invariant_depth < 1)
    throw ConfigError("model.encoder_depth and model.invariant_depth must be >= 1");
  if (model.projector_hidden < 1 || model.head_hidden < 1 || model.decoder_channels < 1)
    throw ConfigError("model hidden sizes must be positive");
  if (model.prior.steps < 1 || model.prior.hidden < 1 || model.prior.depth < 0)
    throw ConfigError("model.prior_* values invalid");
  if (model.prior_condition != "F_s" && model.prior_condition != "F")
    throw ConfigError("model.prior_condition must be \"F_s\" or \"F\"");
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(train.decoder_lr > 0.0)) throw ConfigError("train.decoder_lr must be > 0");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(train.lambda_prior >= 0.0)) throw ConfigError("train.lambda_prior must be >= 0");
  if (!(train.grl_scale > 0.0)) throw ConfigError("train.grl_scale must be > 0");
  if (!(train.adversary_lr_scale > 0.0)) throw ConfigError("train.adversary_lr_scale must be > 0");
  if (!(train.grl_warmup >= 0.0 && train.grl_warmup <= 1.0)) throw ConfigError("train.grl_warmup must lie in [0, 1]");
  if (!(train.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
  if (train.held_out_subject < 1 || train.held_out_subject > data.subjects)
    throw ConfigError("train.held_out_subject must be one of the dataset subjects");
  if (train.num_train_subjects < 0 || train.num_train_subjects > data.subjects - 1)
    throw ConfigError("train.num_train_subjects must lie in [0, subjects - 1]");
  for (double w : {train.weights.rec, train.weights.dis, train.weights.cls, train.weights.inv, train.weights.spe,
                   train.weights.sem})
    if (!(w >= 0.0)) throw ConfigError("train.weight_* must be >= 0");
  try {
    contrastive.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("contrastive: ") + e.what());
  }
  if (eval.probe_iters < 1 || eval.probe_fit_max < 2) throw ConfigError("eval.probe_* values invalid");
  if (!(eval.probe_test_fraction > 0.0 && eval.probe_test_fraction < 1.0))
    throw ConfigError("eval.probe_test_fraction must lie in (0, 1)");
  if (eval.bootstrap < 0 || eval.permutations < 1) throw ConfigError("eval.bootstrap/permutations invalid");
}

json to_json(const RunConfig& c) {
  RunConfig copy = c;
  json out = json::object();
  for (const auto& sec : bind(copy)) {
    json s = json::object();
    for (const auto& f : sec.fields) s[f.key] = read_field(f.ref);
    out[sec.name] = std::move(s);
  }
  return out;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  auto secs = bind(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto sec = std::find_if(secs.begin(), secs.end(), [&](const Section& s) { return it.key() == s.name; });
    if (sec == secs.end()) throw ConfigError("unknown key " + it.key());
    if (!it.value().is_object()) throw ConfigError("section " + it.key() + " must be an object");
    for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
      auto f = std::find_if(sec->fields.begin(), sec->fields.end(), [&](const Field& x) { return kv.key() == x.key; });
      std::string path = it.key() + "." + kv.key();
      if (f == sec->fields.end()) throw ConfigError("unknown key " + path);
      write_field(f->ref, kv.value(), path);
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  auto c = run_config_from_json(j);
  c.validate();
  return c;
}

std::string canonical_string(const RunConfig& c) { return to_json(c).dump(); }

std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_string(c)); }

void apply_override(RunConfig& c, const std::string& assignment) {
  auto eq = assignment.find('=');
  auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + assignment);
  std::string section = assignment.substr(0, dot), key = assignment.substr(dot + 1, eq - dot - 1);
  std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = {{section, {{key, value}}}};
  auto secs = bind(c);
  auto sec = std::find_if(secs.begin(), secs.end(), [&](const Section& s) { return section == s.name; });
  if (sec == secs.end()) throw ConfigError("unknown key " + section);
  auto f = std::find_if(sec->fields.begin(), sec->fields.end(), [&](const Field& x) { return key == x.key; });
  if (f == sec->fields.end()) throw ConfigError("unknown key " + section + "." + key);
  write_field(f->ref, value, section + "." + key);
}

void write_resolved_config(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "config.json");
    out << to_json(c).dump(2) << "\n";
    if (!out) throw DataError("cannot write " + (dir / "config.json").string());
  }
  std::ofstream out(dir / "config.hash");
  out << config_hash(c) << "\n";
}

}  // namespace zsd
