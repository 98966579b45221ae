#include "nasaudit/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "nasaudit/error.hpp"
#include "nasaudit/sha256.hpp"

#include "json.hpp"

namespace nasaudit {

using nlohmann::json;

Dataset realize_dataset(const DatasetSpec& spec) {
  if (spec.kind == "blobs" || spec.kind == "moons" || spec.kind == "rings") {
    return generate_synthetic(synthetic_kind_from(spec.kind), spec.n, spec.dim, spec.classes,
                              spec.seed, spec.noise, spec.modes);
  }
  if (spec.kind == "idx") {
    if (spec.features_path.empty() || spec.labels_path.empty())
      throw ConfigError("dataset kind idx needs features_path and labels_path");
    return load_idx(spec.features_path, spec.labels_path, spec.downsample_to);
  }
  if (spec.kind == "csv") {
    if (spec.features_path.empty()) throw ConfigError("dataset kind csv needs features_path");
    return load_csv(spec.features_path);
  }
  throw ConfigError("unknown dataset kind: " + spec.kind);
}

namespace {

// Reject typos instead of silently ignoring them.
void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("manifest: unknown key \"" + key + "\" in " + where);
  }
}

DatasetSpec parse_dataset_spec(const json& j, const std::string& where) {
  check_keys(j, where,
             {"kind", "n", "dim", "classes", "modes", "noise", "seed", "features_path",
              "labels_path", "downsample_to"});
  DatasetSpec s;
  s.kind = j.value("kind", s.kind);
  s.n = j.value("n", s.n);
  s.dim = j.value("dim", s.dim);
  s.classes = j.value("classes", s.classes);
  s.modes = j.value("modes", s.modes);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  s.features_path = j.value("features_path", s.features_path);
  s.labels_path = j.value("labels_path", s.labels_path);
  s.downsample_to = j.value("downsample_to", s.downsample_to);
  return s;
}

json dataset_spec_json(const DatasetSpec& s) {
  json j;
  j["kind"] = s.kind;
  j["n"] = s.n;
  j["dim"] = s.dim;
  j["classes"] = s.classes;
  j["modes"] = s.modes;
  j["noise"] = s.noise;
  j["seed"] = s.seed;
  if (!s.features_path.empty()) j["features_path"] = s.features_path;
  if (!s.labels_path.empty()) j["labels_path"] = s.labels_path;
  if (s.downsample_to != 0) j["downsample_to"] = s.downsample_to;
  return j;
}

}  // namespace

ExperimentManifest parse_manifest(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  check_keys(j, "manifest root",
             {"name", "dataset", "search_dataset", "split", "algorithms", "attacks", "budgets",
              "seeds", "seed_base", "baseline_samples", "defenses", "augment", "attack_params",
              "diff", "tf", "hybrid", "retrain", "sensitivity"});

  ExperimentManifest m;
  m.name = j.value("name", m.name);
  if (j.contains("dataset")) m.dataset = parse_dataset_spec(j["dataset"], "dataset");
  if (j.contains("search_dataset"))
    m.search_dataset = parse_dataset_spec(j["search_dataset"], "search_dataset");

  if (j.contains("split")) {
    const json& s = j["split"];
    check_keys(s, "split", {"search_train", "search_val", "final_train", "test", "seed"});
    m.split.search_train = s.value("search_train", m.split.search_train);
    m.split.search_val = s.value("search_val", m.split.search_val);
    m.split.final_train = s.value("final_train", m.split.final_train);
    m.split.test = s.value("test", m.split.test);
    m.split.seed = s.value("seed", m.split.seed);
  }

  m.algorithms = j.value("algorithms", m.algorithms);
  m.attacks = j.value("attacks", m.attacks);
  m.budgets = j.value("budgets", m.budgets);
  m.seeds = j.value("seeds", m.seeds);
  m.seed_base = j.value("seed_base", m.seed_base);
  m.baseline_samples = j.value("baseline_samples", m.baseline_samples);
  m.defenses = j.value("defenses", m.defenses);
  m.augment = j.value("augment", m.augment);

  if (j.contains("attack_params")) {
    const json& a = j["attack_params"];
    check_keys(a, "attack_params", {"epsilon", "sigma", "gc_steps", "gc_lr", "gc_target"});
    m.attack_params.epsilon = a.value("epsilon", m.attack_params.epsilon);
    m.attack_params.sigma = a.value("sigma", m.attack_params.sigma);
    m.attack_params.gc_steps = a.value("gc_steps", m.attack_params.gc_steps);
    m.attack_params.gc_lr = a.value("gc_lr", m.attack_params.gc_lr);
    m.attack_params.gc_target = a.value("gc_target", m.attack_params.gc_target);
  }

  if (j.contains("diff")) {
    const json& d = j["diff"];
    check_keys(d, "diff",
               {"stage_cells", "stage_drops", "epochs_per_stage", "alpha_warmup_epochs",
                "weight_lr", "alpha_lr", "batch", "width", "jitter_sigma"});
    m.diff.stage_cells = d.value("stage_cells", m.diff.stage_cells);
    m.diff.stage_drops = d.value("stage_drops", m.diff.stage_drops);
    m.diff.epochs_per_stage = d.value("epochs_per_stage", m.diff.epochs_per_stage);
    m.diff.alpha_warmup_epochs = d.value("alpha_warmup_epochs", m.diff.alpha_warmup_epochs);
    m.diff.weight_lr = d.value("weight_lr", m.diff.weight_lr);
    m.diff.alpha_lr = d.value("alpha_lr", m.diff.alpha_lr);
    m.diff.batch = d.value("batch", m.diff.batch);
    m.diff.width = d.value("width", m.diff.width);
    m.diff.augment.jitter_sigma = d.value("jitter_sigma", m.diff.augment.jitter_sigma);
  }
  if (j.contains("tf")) {
    const json& t = j["tf"];
    check_keys(t, "tf", {"probe_batch", "probe_set", "rounds", "draws", "cells", "width"});
    m.tf.probe_batch = t.value("probe_batch", m.tf.probe_batch);
    m.tf.probe_set = t.value("probe_set", m.tf.probe_set);
    m.tf.rounds = t.value("rounds", m.tf.rounds);
    m.tf.draws = t.value("draws", m.tf.draws);
    m.tf.cells = t.value("cells", m.tf.cells);
    m.tf.width = t.value("width", m.tf.width);
  }
  if (j.contains("hybrid")) {
    const json& h = j["hybrid"];
    check_keys(h, "hybrid",
               {"pool", "rounds", "short_epochs", "probe_batch", "cells", "width", "batch", "lr",
                "metrics"});
    m.hybrid.pool = h.value("pool", m.hybrid.pool);
    m.hybrid.rounds = h.value("rounds", m.hybrid.rounds);
    m.hybrid.short_epochs = h.value("short_epochs", m.hybrid.short_epochs);
    m.hybrid.probe_batch = h.value("probe_batch", m.hybrid.probe_batch);
    m.hybrid.cells = h.value("cells", m.hybrid.cells);
    m.hybrid.width = h.value("width", m.hybrid.width);
    m.hybrid.batch = h.value("batch", m.hybrid.batch);
    m.hybrid.lr = h.value("lr", m.hybrid.lr);
    m.hybrid.metrics = h.value("metrics", m.hybrid.metrics);
  }
  if (j.contains("retrain")) {
    const json& r = j["retrain"];
    check_keys(r, "retrain", {"epochs", "cells", "width", "batch", "lr", "momentum"});
    m.retrain.epochs = r.value("epochs", m.retrain.epochs);
    m.retrain.cells = r.value("cells", m.retrain.cells);
    m.retrain.width = r.value("width", m.retrain.width);
    m.retrain.batch = r.value("batch", m.retrain.batch);
    m.retrain.lr = r.value("lr", m.retrain.lr);
    m.retrain.momentum = r.value("momentum", m.retrain.momentum);
  }
  if (j.contains("sensitivity")) {
    const json& s = j["sensitivity"];
    check_keys(s, "sensitivity", {"n_archs", "probe_batch", "p"});
    m.sensitivity.n_archs = s.value("n_archs", m.sensitivity.n_archs);
    m.sensitivity.probe_batch = s.value("probe_batch", m.sensitivity.probe_batch);
    m.sensitivity.p = s.value("p", m.sensitivity.p);
  }

  // Invariants.
  static const std::set<std::string> kAlgorithms = {"diff", "tf", "hybrid"};
  static const std::set<std::string> kAttacks = {"rlf", "clf", "gaussian", "gc"};
  static const std::set<std::string> kDefenses = {"loss_sanitize", "cluster_relabel"};
  for (const auto& a : m.algorithms)
    if (!kAlgorithms.count(a)) throw ConfigError("manifest: unknown algorithm " + a);
  for (const auto& a : m.attacks)
    if (!kAttacks.count(a)) throw ConfigError("manifest: unknown attack " + a);
  for (const auto& d : m.defenses)
    if (!kDefenses.count(d)) throw ConfigError("manifest: unknown defense " + d);
  for (const double p : m.budgets)
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("manifest: budgets must lie in (0, 1]");
  if (m.seeds == 0) throw ConfigError("manifest: seeds must be positive");
  if (m.algorithms.empty()) throw ConfigError("manifest: algorithm list is empty");
  if (m.attack_params.gc_target != "arch" && m.attack_params.gc_target != "weights")
    throw ConfigError("manifest: gc_target must be arch or weights");
  if (m.augment) m.diff.augment.enabled = true;
  return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open manifest: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

std::string render_manifest(const ExperimentManifest& m) {
  json j;
  j["name"] = m.name;
  j["dataset"] = dataset_spec_json(m.dataset);
  if (m.search_dataset) j["search_dataset"] = dataset_spec_json(*m.search_dataset);
  j["split"] = {{"search_train", m.split.search_train},
                {"search_val", m.split.search_val},
                {"final_train", m.split.final_train},
                {"test", m.split.test},
                {"seed", m.split.seed}};
  j["algorithms"] = m.algorithms;
  j["attacks"] = m.attacks;
  j["budgets"] = m.budgets;
  j["seeds"] = m.seeds;
  j["seed_base"] = m.seed_base;
  j["baseline_samples"] = m.baseline_samples;
  j["defenses"] = m.defenses;
  j["augment"] = m.augment;
  j["attack_params"] = {{"epsilon", m.attack_params.epsilon},
                        {"sigma", m.attack_params.sigma},
                        {"gc_steps", m.attack_params.gc_steps},
                        {"gc_lr", m.attack_params.gc_lr},
                        {"gc_target", m.attack_params.gc_target}};
  j["diff"] = {{"stage_cells", m.diff.stage_cells},
               {"stage_drops", m.diff.stage_drops},
               {"epochs_per_stage", m.diff.epochs_per_stage},
               {"alpha_warmup_epochs", m.diff.alpha_warmup_epochs},
               {"weight_lr", m.diff.weight_lr},
               {"alpha_lr", m.diff.alpha_lr},
               {"batch", m.diff.batch},
               {"width", m.diff.width},
               {"jitter_sigma", m.diff.augment.jitter_sigma}};
  j["tf"] = {{"probe_batch", m.tf.probe_batch}, {"probe_set", m.tf.probe_set},
             {"rounds", m.tf.rounds},           {"draws", m.tf.draws},
             {"cells", m.tf.cells},             {"width", m.tf.width}};
  j["hybrid"] = {{"pool", m.hybrid.pool},
                 {"rounds", m.hybrid.rounds},
                 {"short_epochs", m.hybrid.short_epochs},
                 {"probe_batch", m.hybrid.probe_batch},
                 {"cells", m.hybrid.cells},
                 {"width", m.hybrid.width},
                 {"batch", m.hybrid.batch},
                 {"lr", m.hybrid.lr},
                 {"metrics", m.hybrid.metrics}};
  j["retrain"] = {{"epochs", m.retrain.epochs}, {"cells", m.retrain.cells},
                  {"width", m.retrain.width},   {"batch", m.retrain.batch},
                  {"lr", m.retrain.lr},         {"momentum", m.retrain.momentum}};
  j["sensitivity"] = {{"n_archs", m.sensitivity.n_archs},
                      {"probe_batch", m.sensitivity.probe_batch},
                      {"p", m.sensitivity.p}};
  return j.dump(2) + "\n";
}

std::string manifest_hash(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  return sha256_hex(j.dump());  // nlohmann objects iterate key-sorted
}

std::string manifest_hash(const ExperimentManifest& m) { return manifest_hash(render_manifest(m)); }

}  // namespace nasaudit
