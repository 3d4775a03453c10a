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

#include "zsd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "zsd/error.hpp"
#include "zsd/optim.hpp"

namespace zsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags for counter-based randomness.
constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kMixStream = 0x6d6978ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

bool finite(double v) { return std::isfinite(v); }

ModelDims dims_for(const RunConfig& cfg) {
  ModelDims d;
  d.height = cfg.data.height;
  d.width = cfg.data.width;
  d.patch = cfg.data.patch;
  d.brain_dim = cfg.model.brain_dim;
  d.embed_dim = cfg.data.embed_dim;
  return d;
}

std::string step_dir_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld", static_cast<long long>(step));
  return buf;
}

std::vector<std::pair<std::string, torch::Tensor>> named_params(DecodingModel& model, bool decoder) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model->named_parameters(true)) {
    bool is_dec = item.key().rfind("toy_decoder.", 0) == 0;
    if (is_dec == decoder) out.emplace_back(item.key(), item.value());
  }
  return out;
}

// Stacks one field of the given records; rows are looked up blob by blob.
torch::Tensor gather(const Dataset& data, const std::vector<const SampleRecord*>& recs,
                     BlobRef SampleRecord::*field) {
  std::map<std::string, torch::Tensor> cache;
  std::vector<torch::Tensor> rows;
  rows.reserve(recs.size());
  for (const auto* r : recs) {
    const BlobRef& ref = r->*field;
    auto it = cache.find(ref.blob);
    if (it == cache.end()) it = cache.emplace(ref.blob, data.blobs->tensor(ref.blob)).first;
    rows.push_back(it->second[ref.row]);
  }
  return torch::stack(rows);
}

// Subject recorded alongside the brain map itself (the "subject" blob row
// of the x reference) so that a mislabelled record cannot smuggle a
// held-out subject's map into training.
torch::Tensor map_subjects(const Dataset& data, const std::vector<const SampleRecord*>& recs) {
  std::vector<int64_t> out;
  out.reserve(recs.size());
  torch::Tensor blob;
  if (data.blobs->contains("subject")) blob = data.blobs->tensor("subject").to(torch::kInt64).reshape({-1});
  for (const auto* r : recs) {
    if (blob.defined() && r->x.row < blob.size(0))
      out.push_back(blob[r->x.row].item<int64_t>());
    else
      out.push_back(r->subject_id);
  }
  return torch::tensor(out, torch::kInt64);
}

std::vector<const SampleRecord*> records_for(const DatasetManifest& m, const std::vector<int64_t>& ids) {
  std::map<int64_t, const SampleRecord*> by_id;
  for (const auto& s : m.samples) by_id[s.sample_id] = &s;
  std::vector<const SampleRecord*> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("unknown sample id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

void check_dataset_matches(const Dataset& data, const RunConfig& cfg) {
  const auto& m = data.manifest;
  auto x = m.find_blob("x");
  auto fy = m.find_blob("f_y");
  if (!x || !fy) throw DataError("dataset lacks x or f_y blobs");
  if (m.classes != cfg.data.classes || x->shape.size() != 3 || x->shape[1] != cfg.data.height ||
      x->shape[2] != cfg.data.width || fy->shape.size() != 3 || fy->shape[1] != cfg.data.tokens() ||
      fy->shape[2] != cfg.data.embed_dim)
    throw ConfigError("dataset shape does not match the data section of the config");
}

struct Pool {
  torch::Tensor x, y, f_y, f_y_text, subject_id, label;
  int64_t size() const { return x.size(0); }
};

Pool load_pool(const Dataset& data, const std::vector<const SampleRecord*>& recs) {
  Pool p;
  p.x = gather(data, recs, &SampleRecord::x).to(torch::kFloat32);
  p.y = gather(data, recs, &SampleRecord::y).to(torch::kFloat32);
  p.f_y = gather(data, recs, &SampleRecord::f_y).to(torch::kFloat32);
  p.f_y_text = gather(data, recs, &SampleRecord::f_y_text).to(torch::kFloat32);
  p.subject_id = map_subjects(data, recs);
  std::vector<int64_t> lab;
  for (const auto* r : recs) lab.push_back(r->class_id);
  p.label = torch::tensor(lab, torch::kInt64);
  return p;
}

Checkpoint make_checkpoint(DecodingModel& model, const AdamW& main, const AdamW& dec, const RunConfig& cfg,
                           const std::vector<int64_t>& train_subjects, int64_t step, int64_t total_steps) {
  Checkpoint c;
  c.step = step;
  c.config_hash = config_hash(cfg);
  c.rng_state = json{{"seed", cfg.train.seed}, {"step", step}}.dump();
  c.params = export_parameters(*model);
  c.optimizer = main.state_blobs("main.");
  for (auto& kv : dec.state_blobs("dec.")) c.optimizer.insert(std::move(kv));
  c.extra = {{"config", to_json(cfg)},
             {"train_subjects", train_subjects},
             {"held_out_subject", cfg.train.held_out_subject},
             {"total_steps", total_steps}};
  return c;
}

}  // namespace

const std::vector<std::string>& LossBundle::term_names() {
  static const std::vector<std::string> names = {"rec", "dis", "cls", "inv", "spe", "sem", "prior"};
  return names;
}

double LossBundle::term(const std::string& name) const {
  if (name == "rec") return rec;
  if (name == "dis") return dis;
  if (name == "cls") return cls;
  if (name == "inv") return inv;
  if (name == "spe") return spe;
  if (name == "sem") return sem;
  if (name == "prior") return prior;
  if (name == "total") return total;
  throw std::invalid_argument("unknown loss term " + name);
}

double total_loss(const LossBundle& p, const TrainConfig& t, const AblationFlags& a) {
  for (const auto& name : LossBundle::term_names())
    if (!finite(p.term(name))) throw TrainingAbort(name, "non-finite loss term " + name);
  const auto& w = t.weights;
  double sum = 0.0;
  if (a.sife_anchor) sum += w.rec * p.rec;
  if (a.sife_adv) sum += w.dis * p.dis + w.cls * p.cls;
  if (a.ssfe_adv) sum += w.inv * p.inv;
  sum += w.spe * p.spe;
  if (a.ssfe_anchor) sum += w.sem * p.sem;
  sum += t.lambda_prior * p.prior;
  return sum;
}

torch::Tensor total_loss(const LossTerms& p, const TrainConfig& t, const AblationFlags& a) {
  const auto& w = t.weights;
  torch::Tensor sum;
  auto add = [&](bool on, const torch::Tensor& term, double weight) {
    if (!on || !term.defined()) return;
    auto v = term * weight;
    sum = sum.defined() ? sum + v : v;
  };
  add(a.sife_anchor, p.rec, w.rec);
  add(a.sife_adv, p.dis, w.dis);
  add(a.sife_adv, p.cls, w.cls);
  add(a.ssfe_adv, p.inv, w.inv);
  add(true, p.spe, w.spe);
  add(a.ssfe_anchor, p.sem, w.sem);
  add(true, p.prior, t.lambda_prior);
  if (!sum.defined()) return torch::zeros({});
  return sum;
}

LossBundle to_bundle(const LossTerms& p) {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  LossBundle b;
  b.rec = v(p.rec);
  b.dis = v(p.dis);
  b.cls = v(p.cls);
  b.inv = v(p.inv);
  b.spe = v(p.spe);
  b.sem = v(p.sem);
  b.prior = v(p.prior);
  return b;
}

LossTerms compute_losses(DecodingModel& model, const Batch& batch, const StepContext& ctx, const RunConfig& cfg) {
  const auto& a = cfg.ablation;
  const auto& mix = ctx.mix;
  const auto opts = batch.x.options();
  auto x = mix ? mix->mix(batch.x) : batch.x;
  const int64_t subjects = model->shape().train_subjects;
  auto subject_t = mix ? mix->mix_labels(batch.subject, std::max<int64_t>(subjects, 1), opts) : batch.subject;
  auto label_t = mix ? mix->mix_labels(batch.label, model->shape().classes, opts) : batch.label;

  LossTerms out;
  auto e = model->encoder->forward(x);
  auto dec = decompose(model->inv_extractor, e);
  if (a.sife_anchor) out.rec = loss_rec(x, model->d_rec->forward(e));
  if (a.sife_adv) {
    out.dis = loss_dis(model->d_dis, dec.e_i, subject_t, ctx.grl_scale);
    out.cls = loss_cls(model->d_cls, dec.e_s, subject_t);
  }
  auto f_s = project_semantic(model->p_s, dec.e_i);
  out.spe = loss_spe(f_s, batch.f_y, cfg.contrastive, mix);
  if (a.ssfe_adv) {
    auto f_i = project_invariant(model->p_i, dec.e_s, ctx.grl_scale);
    out.inv = loss_inv(f_i, batch.f_y, cfg.contrastive, mix);
  }
  torch::Tensor f;
  if (a.ssfe_anchor || cfg.model.prior_condition == "F") f = project_general(model->p, e);
  if (a.ssfe_anchor) {
    auto f_t = project_text(model->p_t, e);
    out.sem = semantic_anchor(model->classifier, e, f, f_t, batch.f_y, batch.f_y_text, label_t, cfg.contrastive, mix)
                  .sem;
  }
  auto cond = cfg.model.prior_condition == "F" ? f : f_s;
  auto prior_target = mix ? mix->mix(batch.f_y) : batch.f_y;
  out.prior = loss_prior(model->prior, cond, prior_target, ctx.noise_seed);
  return out;
}

json StepRecord::to_json() const {
  return {{"step", step},         {"epoch", epoch},         {"lr", lr},
          {"beta1", beta1},       {"grl_scale", grl_scale}, {"grad_norm", grad_norm},
          {"mixed", mixed},       {"rec", losses.rec},      {"dis", losses.dis},
          {"cls", losses.cls},    {"inv", losses.inv},      {"spe", losses.spe},
          {"sem", losses.sem},    {"prior", losses.prior},  {"total", losses.total},
          {"decoder", decoder}};
}

StepRecord StepRecord::from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<int64_t>();
  r.epoch = j.at("epoch").get<int64_t>();
  r.lr = j.at("lr").get<double>();
  r.beta1 = j.at("beta1").get<double>();
  r.grl_scale = j.at("grl_scale").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.mixed = j.at("mixed").get<bool>();
  r.losses.rec = j.at("rec").get<double>();
  r.losses.dis = j.at("dis").get<double>();
  r.losses.cls = j.at("cls").get<double>();
  r.losses.inv = j.at("inv").get<double>();
  r.losses.spe = j.at("spe").get<double>();
  r.losses.sem = j.at("sem").get<double>();
  r.losses.prior = j.at("prior").get<double>();
  r.losses.total = j.at("total").get<double>();
  r.decoder = j.at("decoder").get<double>();
  return r;
}

std::vector<int64_t> training_subjects(const DatasetManifest& manifest, const TrainConfig& train) {
  std::vector<int64_t> subjects = manifest.subjects;
  std::sort(subjects.begin(), subjects.end());
  if (std::find(subjects.begin(), subjects.end(), train.held_out_subject) == subjects.end())
    throw DataError("held-out subject " + std::to_string(train.held_out_subject) + " is not in the dataset");
  std::vector<int64_t> out;
  for (auto s : subjects)
    if (s != train.held_out_subject) out.push_back(s);
  if (train.num_train_subjects > 0) {
    if (train.num_train_subjects > int64_t(out.size()))
      throw ConfigError("train.num_train_subjects exceeds the available subjects");
    out.resize(std::size_t(train.num_train_subjects));
  }
  if (out.empty()) throw DataError("no training subjects left after holding one out");
  return out;
}

TrainResult train(const fs::path& data_dir, const RunConfig& cfg, const fs::path& out_dir, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.train.deterministic) torch::set_num_threads(1);
  const Dataset data = read_dataset(data_dir);
  check_dataset_matches(data, cfg);
  const auto subjects = training_subjects(data.manifest, cfg.train);
  std::map<int64_t, int64_t> subject_index;
  for (std::size_t i = 0; i < subjects.size(); ++i) subject_index[subjects[i]] = int64_t(i);

  auto split = data.manifest.splits.find("train");
  if (split == data.manifest.splits.end()) throw DataError("dataset has no train split");
  std::vector<int64_t> ids;
  for (const auto* r : records_for(data.manifest, split->second))
    if (subject_index.count(r->subject_id)) ids.push_back(r->sample_id);
  const auto recs = records_for(data.manifest, ids);
  if (recs.size() < 2) throw DataError("training pool has fewer than two samples");
  const Pool pool = load_pool(data, recs);

  const int64_t batch = std::min<int64_t>(cfg.train.batch_size, pool.size());
  const int64_t per_epoch = pool.size() / batch;
  const int64_t total_steps = cfg.train.epochs * per_epoch;
  const int64_t mix_until = int64_t(std::floor(double(total_steps) * (1.0 - cfg.contrastive.mix_off_fraction)));
  const int64_t warm = int64_t(std::llround(cfg.train.grl_warmup * double(total_steps)));
  OneCycle sched{cfg.train.lr, total_steps};
  OneCycle dec_sched{cfg.train.decoder_lr, total_steps};

  torch::manual_seed(cfg.train.seed);
  ModelShape shape{dims_for(cfg), cfg.data.classes, int64_t(subjects.size())};
  DecodingModel model(cfg.model, shape);
  model->train();
  AdamW main(named_params(model, false), {.weight_decay = cfg.train.weight_decay});
  AdamW dec(named_params(model, true), {.weight_decay = cfg.train.weight_decay});
  main.set_lr_scale("d_dis.", cfg.train.adversary_lr_scale);
  main.set_lr_scale("p_i.", cfg.train.adversary_lr_scale);
  const auto main_params = main.parameters();

  int64_t start = 0;
  if (opts.resume_from) {
    CheckpointLoadOptions lo;
    lo.expected_config_hash = config_hash(cfg);
    auto ck = load_checkpoint(*opts.resume_from, lo);
    import_parameters(*model, ck.params);
    main.load_state(ck.optimizer, "main.");
    dec.load_state(ck.optimizer, "dec.");
    start = ck.step;
    if (start > total_steps) throw DataError("checkpoint step exceeds the schedule");
  }

  fs::create_directories(out_dir / "checkpoints");
  write_resolved_config(cfg, out_dir);
  std::ofstream log(out_dir / "metrics.jsonl", opts.resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (out_dir / "metrics.jsonl").string());

  TrainResult result;
  result.total_steps = total_steps;
  auto save = [&](const std::string& name, int64_t step) {
    auto dir = out_dir / "checkpoints" / name;
    save_checkpoint(make_checkpoint(model, main, dec, cfg, subjects, step, total_steps), dir);
    result.checkpoint = dir;
  };

  std::vector<int64_t> order;
  int64_t order_epoch = -1;
  for (int64_t s = start; s < total_steps; ++s) {
    const int64_t epoch = s / per_epoch;
    if (epoch != order_epoch) {
      order.resize(std::size_t(pool.size()));
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(mix_seed({cfg.train.seed, kOrderStream, std::uint64_t(epoch)}));
      std::shuffle(order.begin(), order.end(), rng);
      order_epoch = epoch;
    }
    const int64_t pos = (s % per_epoch) * batch;
    auto idx = torch::tensor(std::vector<int64_t>(order.begin() + pos, order.begin() + pos + batch), torch::kInt64);

    Batch b;
    b.x = pool.x.index_select(0, idx);
    b.y = pool.y.index_select(0, idx);
    b.f_y = pool.f_y.index_select(0, idx);
    b.f_y_text = pool.f_y_text.index_select(0, idx);
    b.label = pool.label.index_select(0, idx);
    auto sid = pool.subject_id.index_select(0, idx);
    std::vector<int64_t> sub(static_cast<std::size_t>(batch));
    for (int64_t i = 0; i < batch; ++i) {
      int64_t id = sid[i].item<int64_t>();
      auto it = subject_index.find(id);
      if (id == cfg.train.held_out_subject || it == subject_index.end())
        throw ProtocolError("subject " + std::to_string(id) + " is not a training subject but reached batch " +
                            std::to_string(s + 1));
      sub[std::size_t(i)] = it->second;
    }
    b.subject = torch::tensor(sub, torch::kInt64);

    StepContext ctx;
    if (s < mix_until) {
      std::mt19937_64 rng(mix_seed({cfg.train.seed, kMixStream, std::uint64_t(s)}));
      ctx.mix = draw_mix(batch, cfg.contrastive, rng);
    }
    ctx.grl_scale = cfg.train.grl_scale * (warm > 0 ? std::min(1.0, double(s + 1) / double(warm)) : 1.0);
    ctx.noise_seed = mix_seed({cfg.train.seed, kNoiseStream, std::uint64_t(s)});

    StepRecord rec;
    rec.step = s + 1;
    rec.epoch = epoch + 1;
    rec.lr = sched.lr(s);
    rec.beta1 = sched.beta1(s);
    rec.grl_scale = ctx.grl_scale;
    rec.mixed = ctx.mix.has_value();

    // Batch-norm statistics move during the forward pass; an aborted step
    // must not leak them into last_good.
    std::vector<torch::Tensor> buffers;
    for (const auto& t : model->buffers()) buffers.push_back(t.clone());
    torch::Tensor total;
    try {
      auto terms = compute_losses(model, b, ctx, cfg);
      rec.losses = to_bundle(terms);
      total_loss(rec.losses, cfg.train, cfg.ablation);
      total = total_loss(terms, cfg.train, cfg.ablation);
      rec.losses.total = total.item<double>();
      if (!finite(rec.losses.total)) throw TrainingAbort("total", "non-finite total loss");
      main.zero_grad();
      total.backward();
      rec.grad_norm = clip_grad_norm(main_params, cfg.train.clip_norm);
      if (!finite(rec.grad_norm)) throw TrainingAbort("grad_norm", "non-finite gradient norm");
    } catch (const TrainingAbort& e) {
      {
        torch::NoGradGuard ng;
        auto current = model->buffers();
        for (std::size_t i = 0; i < current.size(); ++i) current[i].copy_(buffers[i]);
      }
      save("last_good", s);
      throw TrainingAbort(e.term(), std::string(e.what()) + " at step " + std::to_string(s + 1));
    }
    main.step(rec.lr, rec.beta1);

    dec.zero_grad();
    auto dloss = mse(model->toy_decoder->forward(b.f_y), b.y);
    dloss.backward();
    dec.step(dec_sched.lr(s), dec_sched.beta1(s));
    rec.decoder = dloss.item<double>();

    log << rec.to_json().dump() << "\n";
    log.flush();
    result.log.push_back(rec);
    result.steps = s + 1;
    if (!opts.quiet && (rec.step % 50 == 0 || rec.step == total_steps))
      std::cerr << "step " << rec.step << "/" << total_steps << " total " << rec.losses.total << "\n";
    if (cfg.train.checkpoint_every > 0 && rec.step % cfg.train.checkpoint_every == 0 && rec.step != total_steps)
      save(step_dir_name(rec.step), rec.step);
    if (opts.stop_after >= 0 && rec.step >= opts.stop_after && rec.step != total_steps) {
      if (result.checkpoint.filename() != step_dir_name(rec.step)) save(step_dir_name(rec.step), rec.step);
      return result;
    }
  }
  result.steps = std::max(result.steps, start);
  save("final", total_steps);
  return result;
}

LoadedModel load_model(const fs::path& checkpoint_dir) {
  LoadedModel lm;
  lm.checkpoint = load_checkpoint(checkpoint_dir);
  const auto& extra = lm.checkpoint.extra;
  if (!extra.contains("config") || !extra.contains("train_subjects"))
    throw DataError("checkpoint lacks its training config");
  try {
    lm.config = run_config_from_json(extra.at("config"));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (config_hash(lm.config) != lm.checkpoint.config_hash)
    throw DataError("checkpoint config does not match its recorded hash");
  lm.train_subjects = extra.at("train_subjects").get<std::vector<int64_t>>();
  ModelShape shape{dims_for(lm.config), lm.config.data.classes, int64_t(lm.train_subjects.size())};
  lm.model = DecodingModel(lm.config.model, shape);
  import_parameters(*lm.model, lm.checkpoint.params);
  lm.model->eval();
  return lm;
}

SampleFeatures features_for(LoadedModel& lm, const Dataset& data, const std::vector<int64_t>& sample_ids) {
  if (sample_ids.empty()) throw DataError("no samples selected");
  const auto recs = records_for(data.manifest, sample_ids);
  Pool p = load_pool(data, recs);
  SampleFeatures out;
  out.x = p.x;
  out.y = p.y;
  out.f_y = p.f_y;
  out.subject_id = p.subject_id;
  out.label = p.label;
  std::vector<FeatureSet> parts;
  for (int64_t i = 0; i < p.size(); i += 128) {
    auto xb = p.x.slice(0, i, std::min<int64_t>(i + 128, p.size()));
    parts.push_back(extract_features(lm.model, xb));
  }
  auto cat = [&](torch::Tensor FeatureSet::*m) {
    std::vector<torch::Tensor> v;
    for (auto& f : parts) v.push_back(f.*m);
    return torch::cat(v);
  };
  out.features.e = cat(&FeatureSet::e);
  out.features.e_i = cat(&FeatureSet::e_i);
  out.features.e_s = cat(&FeatureSet::e_s);
  out.features.f_s = cat(&FeatureSet::f_s);
  out.features.f_i = cat(&FeatureSet::f_i);
  out.features.f = cat(&FeatureSet::f);
  out.features.f_pred = cat(&FeatureSet::f_pred);
  return out;
}

std::vector<int64_t> split_samples(const DatasetManifest& m, const std::string& split,
                                   const std::vector<int64_t>& subjects) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) throw DataError("dataset has no split '" + split + "'");
  std::set<int64_t> want(subjects.begin(), subjects.end());
  std::vector<int64_t> out;
  for (const auto* r : records_for(m, it->second))
    if (want.count(r->subject_id)) out.push_back(r->sample_id);
  return out;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = {"E", "E_i", "E_s", "F", "F_s", "F_i"};
  return names;
}

torch::Tensor feature_matrix(const FeatureSet& f, const std::string& name) {
  const torch::Tensor* t = nullptr;
  if (name == "E") t = &f.e;
  if (name == "E_i") t = &f.e_i;
  if (name == "E_s") t = &f.e_s;
  if (name == "F") t = &f.f;
  if (name == "F_s") t = &f.f_s;
  if (name == "F_i") t = &f.f_i;
  if (!t) throw ConfigError("unknown feature '" + name + "' (expected one of E, E_i, E_s, F, F_s, F_i)");
  return t->mean(1);
}

namespace {

struct ProbeSets {
  SampleFeatures class_fit, class_eval, subject_set;
};

ProbeSets probe_sets(LoadedModel& lm, const Dataset& data, int64_t subject) {
  const auto& ev = lm.config.eval;
  std::vector<int64_t> fit_subjects;
  for (auto s : lm.train_subjects)
    if (s != subject) fit_subjects.push_back(s);
  if (fit_subjects.empty()) throw DataError("no training subjects other than the evaluated one");
  auto fit_ids = split_samples(data.manifest, "train", fit_subjects);
  std::mt19937_64 rng(mix_seed({ev.seed, kProbeStream}));
  std::shuffle(fit_ids.begin(), fit_ids.end(), rng);
  if (int64_t(fit_ids.size()) > ev.probe_fit_max) fit_ids.resize(std::size_t(ev.probe_fit_max));
  std::sort(fit_ids.begin(), fit_ids.end());

  std::vector<int64_t> eval_ids;
  for (const auto& r : data.manifest.samples)
    if (r.subject_id == subject) eval_ids.push_back(r.sample_id);

  ProbeSets ps;
  ps.class_fit = features_for(lm, data, fit_ids);
  ps.class_eval = features_for(lm, data, eval_ids);
  ps.subject_set = features_for(lm, data, split_samples(data.manifest, "test", lm.train_subjects));
  return ps;
}

ProbeOptions probe_options(const EvalConfig& ev) {
  ProbeOptions o;
  o.iters = ev.probe_iters;
  o.l2 = ev.probe_l2;
  o.test_fraction = ev.probe_test_fraction;
  o.seed = ev.seed;
  return o;
}

ProbeResult run_probe(const ProbeSets& ps, const EvalConfig& ev, const std::string& feature,
                      const std::string& target) {
  auto o = probe_options(ev);
  if (target == "class")
    return linear_probe(feature_matrix(ps.class_fit.features, feature), ps.class_fit.label,
                        feature_matrix(ps.class_eval.features, feature), ps.class_eval.label, o);
  if (target == "subject")
    return linear_probe(feature_matrix(ps.subject_set.features, feature), ps.subject_set.subject_id, o);
  throw ConfigError("unknown probe target '" + target + "' (expected class or subject)");
}

void guard_subject(const LoadedModel& lm, const Dataset& data, int64_t subject, bool allow_seen) {
  const auto& subs = data.manifest.subjects;
  if (std::find(subs.begin(), subs.end(), subject) == subs.end())
    throw DataError("subject " + std::to_string(subject) + " is not in the dataset");
  bool seen = std::find(lm.train_subjects.begin(), lm.train_subjects.end(), subject) != lm.train_subjects.end();
  if (seen && !allow_seen)
    throw ProtocolError("subject " + std::to_string(subject) + " was used for training this checkpoint");
}

}  // namespace

ProbeResult probe_feature(LoadedModel& lm, const Dataset& data, int64_t subject, const std::string& feature,
                          const std::string& target) {
  const auto& names = feature_names();
  if (std::find(names.begin(), names.end(), feature) == names.end())
    throw ConfigError("unknown feature '" + feature + "' (expected one of E, E_i, E_s, F, F_s, F_i)");
  if (target != "class" && target != "subject")
    throw ConfigError("unknown probe target '" + target + "' (expected class or subject)");
  torch::NoGradGuard no_grad;
  auto ps = probe_sets(lm, data, subject);
  return run_probe(ps, lm.config.eval, feature, target);
}

MetricsReport zero_shot_eval(const fs::path& checkpoint_dir, const fs::path& data_dir, int64_t subject,
                             const EvalOptions& opts) {
  auto lm = load_model(checkpoint_dir);
  if (lm.config.train.deterministic) torch::set_num_threads(1);
  const auto data = read_dataset(data_dir);
  guard_subject(lm, data, subject, opts.allow_seen_subject);
  const auto& ev = lm.config.eval;
  torch::NoGradGuard no_grad;

  auto ids = split_samples(data.manifest, "test", {subject});
  if (ids.size() < 2) throw DataError("subject " + std::to_string(subject) + " has fewer than two test samples");
  auto sf = features_for(lm, data, ids);
  auto recon = decode_image(lm.model->toy_decoder, sf.features.f_pred).clamp(0.0, 1.0);
  auto truth = sf.y.clamp(0.0, 1.0);

  MetricsReport rep;
  rep.subject = subject;
  rep.seed = ev.seed;
  rep.n_samples = int64_t(ids.size());
  auto pix = pixcorr(recon, truth);
  rep.pixcorr = pix.mean;
  rep.n_skipped = pix.skipped;
  auto ss = ssim(recon, truth);
  rep.ssim = ss.mean;
  rep.two_way_ident = two_way_identification(sf.features.f_pred, sf.f_y).fraction;
  rep.two_way_ident_decoder =
      two_way_identification(lm.model->toy_decoder->features(sf.features.f_pred), lm.model->toy_decoder->features(sf.f_y))
          .fraction;

  // Controls: a derangement of the reconstructions, and the subject's mean reconstruction.
  const int64_t n = recon.size(0);
  std::vector<int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix_seed({ev.seed, kProbeStream, 1}));
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int64_t i = 0; i < n; ++i)
    if (perm[i] == i) std::swap(perm[i], perm[(i + 1) % n]);
  auto shuffled = pixcorr(recon.index_select(0, torch::tensor(perm, torch::kInt64)), truth);
  auto mean_img = pixcorr(recon.mean(0, true).expand_as(recon).contiguous(), truth);

  std::vector<double> a, bs, bm;
  for (int64_t i = 0; i < n; ++i) {
    double p = pix.per_pair[i], q = shuffled.per_pair[i], r = mean_img.per_pair[i];
    if (std::isnan(p)) continue;
    a.push_back(p);
    bs.push_back(std::isnan(q) ? 0.0 : q);
    bm.push_back(std::isnan(r) ? 0.0 : r);
  }
  auto mean_of = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  rep.pixcorr_shuffled = mean_of(bs);
  rep.pixcorr_mean_image = mean_of(bm);
  rep.p_vs_shuffled = paired_permutation_pvalue(a, bs, ev.permutations, ev.seed);
  rep.p_vs_mean_image = paired_permutation_pvalue(a, bm, ev.permutations, ev.seed + 1);
  rep.pixcorr_ci = bootstrap_ci(a, ev.bootstrap, ev.seed);
  rep.ssim_ci = bootstrap_ci(ss.per_image, ev.bootstrap, ev.seed + 1);

  if (opts.with_probes) {
    auto ps = probe_sets(lm, data, subject);
    for (const auto& f : feature_names()) rep.probe_results[f + ".class"] = {"class", run_probe(ps, ev, f, "class")};
    for (const auto& f : {"E", "E_i", "E_s"})
      rep.probe_results[std::string(f) + ".subject"] = {"subject", run_probe(ps, ev, f, "subject")};
  }
  return rep;
}

}  // namespace zsd
