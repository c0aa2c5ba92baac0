/* Copyright 2026 The htsr-decay Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "htsr/config.hpp"

#include <cstdint>
#include <fstream>
#include <set>

#include "htsr/error.hpp"

namespace htsr {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw Error(ErrorCode::kConfig, what);
}

// Reads fields from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.is_null()) {
      obj_ = json::object();
    } else if (!doc.is_object()) {
      fail("'" + name_ + "' must be an object");
    } else {
      obj_ = doc;
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      fail(name_ + "." + key + " has the wrong type");
    }
  }

  void size(const char* key, std::size_t& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
      fail(name_ + "." + key + " must be a nonnegative integer");
    }
    out = it->get<std::size_t>();
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.contains(it.key())) fail("unknown field " + name_ + "." + it.key());
    }
  }

 private:
  json obj_;
  std::string name_;
  std::set<std::string> seen_;
};

const json& field(const json& doc, const char* key) {
  static const json kNull;
  auto it = doc.find(key);
  return it == doc.end() ? kNull : *it;
}

AssignFn parse_assign(const json& j) {
  Section s(j, "scheduler.assign");
  std::string kind = "linear";
  s.get("kind", kind);
  AssignFn fn;
  if (kind == "uniform") {
    fn = assign::Uniform{};
  } else if (kind == "linear") {
    assign::Linear lin;
    s.get("s1", lin.s1);
    s.get("s2", lin.s2);
    fn = lin;
  } else if (kind == "sqrt") {
    fn = assign::Sqrt{};
  } else if (kind == "log2") {
    fn = assign::Log2{};
  } else if (kind == "sigmoid_like") {
    assign::SigmoidLike sig;
    s.get("beta", sig.beta);
    fn = sig;
  } else if (kind == "awd_global") {
    fn = assign::AwdGlobal{};
  } else {
    fail("unknown assignment function '" + kind + "'");
  }
  s.finish();
  return fn;
}

json assign_to_json(const AssignFn& fn) {
  json j = {{"kind", std::string(assign_fn_name(fn))}};
  if (const auto* lin = std::get_if<assign::Linear>(&fn)) {
    j["s1"] = lin->s1;
    j["s2"] = lin->s2;
  } else if (const auto* sig = std::get_if<assign::SigmoidLike>(&fn)) {
    j["beta"] = sig->beta;
  }
  return j;
}

SchedulerConfig parse_scheduler(const json& j) {
  Section s(j, "scheduler");
  SchedulerConfig cfg;
  s.get("eta", cfg.eta);
  if (const json* a = s.child("assign")) cfg.assign = parse_assign(*a);
  std::string metric(metric_name(cfg.metric));
  s.get("metric", metric);
  auto m = parse_metric(metric);
  if (!m) fail("unknown metric '" + metric + "'");
  cfg.metric = *m;
  std::string fit(fit_method_name(cfg.fit));
  s.get("fit", fit);
  auto f = parse_fit_method(fit);
  if (!f) fail("unknown fit method '" + fit + "'");
  cfg.fit = *f;
  s.size("interval", cfg.interval);
  if (const json* kinds = s.child("scheduled_kinds")) {
    if (!kinds->is_array()) fail("scheduler.scheduled_kinds must be an array");
    cfg.scheduled_kinds.clear();
    for (const auto& k : *kinds) {
      auto kind = k.is_string() ? kind_from_name(k.get<std::string>())
                                : std::nullopt;
      if (!kind) fail("unknown module kind in scheduler.scheduled_kinds");
      cfg.scheduled_kinds.insert(*kind);
    }
  }
  s.get("invert_metric", cfg.invert_metric);
  s.get("per_layer_range", cfg.per_layer_range);
  s.size("fix_finger_bins", cfg.fit_options.fix_finger_bins);
  s.size("gof_max_candidates", cfg.fit_options.gof_max_candidates);
  s.finish();
  return cfg;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& doc,
                                         const std::filesystem::path& base_dir) {
  if (!doc.is_object()) fail("config must be a JSON object");
  Section top(doc, "config");
  top.child("model");
  top.child("train");
  top.child("scheduler");
  top.child("corpus");
  top.finish();

  ExperimentConfig cfg;
  {
    Section s(field(doc, "model"), "model");
    s.size("hidden", cfg.model.hidden);
    s.size("intermediate", cfg.model.intermediate);
    s.size("heads", cfg.model.heads);
    s.size("layers", cfg.model.layers);
    s.size("vocab", cfg.model.vocab);
    s.size("context", cfg.model.context);
    s.finish();
  }
  {
    Section s(field(doc, "train"), "train");
    TrainConfig& t = cfg.train;
    s.get("lr", t.lr);
    s.size("steps", t.steps);
    s.get("warmup_fraction", t.warmup_fraction);
    s.size("batch", t.batch);
    s.size("seq_len", t.seq_len);
    s.get("clip", t.clip);
    s.get("seed", t.seed);
    std::string opt(optimizer_name(t.optimizer));
    s.get("optimizer", opt);
    auto mode = parse_optimizer(opt);
    if (!mode) fail("unknown optimizer '" + opt + "'");
    t.optimizer = *mode;
    s.get("lr_floor_ratio", t.lr_floor_ratio);
    s.size("eval_tokens", t.eval_tokens);
    s.finish();
  }
  cfg.train.scheduler = parse_scheduler(field(doc, "scheduler"));
  {
    Section s(field(doc, "corpus"), "corpus");
    s.get("path", cfg.corpus.path);
    s.size("split_offset", cfg.corpus.split_offset);
    s.size("synthetic_bytes", cfg.corpus.synthetic_bytes);
    s.get("synthetic_seed", cfg.corpus.synthetic_seed);
    s.finish();
    if (cfg.corpus.path.empty() == (cfg.corpus.synthetic_bytes == 0)) {
      fail("corpus needs exactly one of 'path' or 'synthetic_bytes'");
    }
    if (!cfg.corpus.path.empty()) {
      std::filesystem::path p(cfg.corpus.path);
      if (p.is_relative()) p = base_dir / p;
      cfg.corpus.path = p.lexically_normal().string();
    }
  }
  cfg.train.validate(cfg.model);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) fail("config " + path.string() + " is not valid JSON");
  return parse_experiment_config(doc, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& s = t.scheduler;
  json kinds = json::array();
  for (auto k : s.scheduled_kinds) kinds.push_back(std::string(kind_name(k)));
  json corpus = {{"split_offset", cfg.corpus.split_offset}};
  if (!cfg.corpus.path.empty()) {
    corpus["path"] = cfg.corpus.path;
  } else {
    corpus["synthetic_bytes"] = cfg.corpus.synthetic_bytes;
    corpus["synthetic_seed"] = cfg.corpus.synthetic_seed;
  }
  return {
      {"model",
       {{"hidden", m.hidden},
        {"intermediate", m.intermediate},
        {"heads", m.heads},
        {"layers", m.layers},
        {"vocab", m.vocab},
        {"context", m.context}}},
      {"train",
       {{"lr", t.lr},
        {"steps", t.steps},
        {"warmup_fraction", t.warmup_fraction},
        {"batch", t.batch},
        {"seq_len", t.seq_len},
        {"clip", t.clip},
        {"seed", t.seed},
        {"optimizer", std::string(optimizer_name(t.optimizer))},
        {"lr_floor_ratio", t.lr_floor_ratio},
        {"eval_tokens", t.eval_tokens}}},
      {"scheduler",
       {{"eta", s.eta},
        {"assign", assign_to_json(s.assign)},
        {"metric", std::string(metric_name(s.metric))},
        {"fit", std::string(fit_method_name(s.fit))},
        {"interval", s.interval},
        {"scheduled_kinds", kinds},
        {"invert_metric", s.invert_metric},
        {"per_layer_range", s.per_layer_range},
        {"fix_finger_bins", s.fit_options.fix_finger_bins},
        {"gof_max_candidates", s.fit_options.gof_max_candidates}}},
      {"corpus", corpus},
  };
}

Corpus load_corpus(const CorpusSpec& spec) {
  std::vector<std::uint8_t> bytes =
      spec.path.empty() ? synthetic_corpus(spec.synthetic_bytes,
                                           spec.synthetic_seed)
                        : read_corpus_file(spec.path);
  const std::size_t offset =
      spec.split_offset != 0 ? spec.split_offset : bytes.size() / 10 * 9;
  return split_corpus(bytes, offset);
}

}  // namespace htsr
