#include "nasaudit/audit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "nasaudit/defense_suite.hpp"
#include "nasaudit/error.hpp"
#include "nasaudit/proxy_metrics.hpp"
#include "nasaudit/report.hpp"
#include "nasaudit/rng.hpp"

#include "json.hpp"

namespace nasaudit {

using nlohmann::json;

std::string budget_tag(double budget) {
  return "p" + std::to_string(static_cast<long>(std::lround(budget * 100.0)));
}

std::string condition_tag(const std::string& algorithm, const std::string& attack, double budget,
                          const std::string& defense) {
  std::string tag = algorithm + "/" + attack;
  if (attack != "clean" && attack != "ood") tag += "/" + budget_tag(budget);
  if (!defense.empty()) tag += "/" + defense;
  return tag;
}

std::filesystem::path run_directory(const ExperimentManifest& m, const RunOptions& opts) {
  return opts.out_root / manifest_hash(m).substr(0, 16);
}

Dataset craft_search_poison(const ExperimentManifest& m, const Dataset& part,
                            const std::string& attack, double budget, std::uint64_t trial_seed,
                            const std::filesystem::path& artifact_dir, const std::string& role) {
  if (attack == "clean") return part;
  const Rng root(trial_seed);
  const bool val_role = role == "val";
  // Row choices and surrogates are role-scoped so the two halves are
  // tampered independently; the GC target below stays shared.
  const Rng rng = val_role ? root.derive("poison-val") : root;
  if (attack == "rlf") {
    Rng r = rng.derive("rlf");
    return rlf(part, budget, r);
  }
  if (attack == "clf") {
    Mlp surrogate(part.dim(), part.class_count, {32, 32}, rng.derive("clf-surrogate").next());
    surrogate.fit(part, MlpTrainConfig{.epochs = 30, .batch = 32, .lr = 1e-2},
                  rng.derive("clf-fit").next());
    return clf(part, budget, surrogate);
  }
  if (attack == "gaussian") {
    Rng r = rng.derive("gaussian");
    return gaussian_noise(part, budget, m.attack_params.sigma, m.attack_params.epsilon, r);
  }
  if (attack == "gc") {
    GcConfig cfg;
    cfg.steps = m.attack_params.gc_steps;
    cfg.lr = m.attack_params.gc_lr;
    cfg.epsilon = m.attack_params.epsilon;
    cfg.seed = rng.derive("gc").next();

    GcResult result;
    if (m.attack_params.gc_target == "arch") {
      SupernetConfig scfg;
      scfg.cells = m.diff.stage_cells.front();
      scfg.width = m.diff.width;
      scfg.input_dim = part.dim();
      scfg.classes = part.class_count;
      Supernet supernet(scfg, root.derive("gc-supernet").next());
      supernet.set_norm_stats(compute_norm_stats(part));
      cfg.target_group = ParamGroup::arch;
      result = nas_gc(GcTargetKind::architectural_params, &supernet, nullptr, part, budget, cfg);
    } else {
      Rng arch_rng = root.derive("gc-victim-arch");
      NetworkInstance victim =
          instantiate(random_genotype(arch_rng), m.retrain.cells, m.retrain.width,
                      part.class_count, part.dim(), root.derive("gc-victim-init").next());
      victim.set_norm_stats(compute_norm_stats(part));
      train_network(victim, part, 10, m.retrain.batch, 0.05, 0.9,
                    root.derive("gc-victim-train").next());
      cfg.target_group = ParamGroup::weights;
      result = nas_gc(GcTargetKind::model_weights, nullptr, &victim, part, budget, cfg);
    }
    if (!artifact_dir.empty()) {
      std::filesystem::create_directories(artifact_dir);
      const std::filesystem::path traj =
          artifact_dir / ("gc_" + budget_tag(budget) + "_seed" + std::to_string(trial_seed) +
                          (val_role ? "_val" : "") + ".csv");
      std::ofstream out(traj, std::ios::binary);
      out << gc_trajectory_csv(result);
    }
    return result.poisoned;
  }
  throw ConfigError("unknown attack: " + attack);
}

namespace {

json record_json(const TrialRecord& r, const std::string& hash) {
  json j;
  j["manifest_hash"] = hash;
  j["condition"] = r.condition;
  j["algorithm"] = r.algorithm;
  j["attack"] = r.attack;
  j["budget"] = r.budget;
  j["defense"] = r.defense;
  j["seed_index"] = r.seed_index;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  if (r.failed) {
    j["failure_reason"] = r.failure_reason;
  } else {
    j["genotype"] = r.genotype;
    j["accuracy"] = r.accuracy;
    j["delta_imp"] = r.delta_imp;
  }
  j["search_seconds"] = r.search_seconds;
  return j;
}

TrialRecord record_from_json(const json& j) {
  TrialRecord r;
  r.condition = j.at("condition").get<std::string>();
  r.algorithm = j.value("algorithm", std::string());
  r.attack = j.value("attack", std::string("clean"));
  r.budget = j.value("budget", 0.0);
  r.defense = j.value("defense", std::string());
  r.seed_index = j.at("seed_index").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.failed = j.value("failed", false);
  r.failure_reason = j.value("failure_reason", std::string());
  r.genotype = j.value("genotype", std::string());
  r.accuracy = j.value("accuracy", 0.0);
  r.delta_imp = j.value("delta_imp", 0.0);
  r.search_seconds = j.value("search_seconds", 0.0);
  return r;
}

std::string record_key(const std::string& condition, std::size_t seed_index) {
  return condition + "#" + std::to_string(seed_index);
}

// Append-only journal plus the in-memory index used for resume.
class Journal {
 public:
  Journal(const std::filesystem::path& path, const std::string& hash, bool resume)
      : hash_(hash) {
    if (resume && std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          const json j = json::parse(line);
          if (j.value("manifest_hash", std::string()) != hash_) continue;
          const TrialRecord r = record_from_json(j);
          records_[record_key(r.condition, r.seed_index)] = r;
        } catch (const json::exception&) {
          break;  // torn tail line from an interrupted run
        }
      }
    }
    out_.open(path, resume ? std::ios::app | std::ios::binary
                           : std::ios::trunc | std::ios::binary);
    if (!out_) throw FormatError("cannot open journal: " + path.string());
  }

  bool has(const std::string& condition, std::size_t seed_index) const {
    return records_.count(record_key(condition, seed_index)) > 0;
  }

  TrialRecord get(const std::string& condition, std::size_t seed_index) const {
    return records_.at(record_key(condition, seed_index));
  }

  void append(const TrialRecord& r) {
    std::lock_guard<std::mutex> lock(mu_);
    records_[record_key(r.condition, r.seed_index)] = r;
    out_ << record_json(r, hash_).dump() << '\n';
    out_.flush();
  }

  std::vector<TrialRecord> all() const {
    std::vector<TrialRecord> out;
    out.reserve(records_.size());
    for (const auto& [_, r] : records_) out.push_back(r);
    return out;
  }

 private:
  std::string hash_;
  std::map<std::string, TrialRecord> records_;
  std::ofstream out_;
  std::mutex mu_;
};

// Both halves of one poisoned search split; the attack covers the whole
// search set because the bi-level validation signal is attack surface too.
struct PoisonPair {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> val;
};

// Deterministic per-(attack, budget, seed) poison store shared by algorithms.
class PoisonCache {
 public:
  PoisonCache(const ExperimentManifest& m, const Dataset& search_train, const Dataset& search_val,
              std::filesystem::path artifact_dir)
      : m_(m),
        search_train_(search_train),
        search_val_(search_val),
        artifact_dir_(std::move(artifact_dir)) {}

  PoisonPair get(const std::string& attack, double budget, std::uint64_t trial_seed) {
    const std::string key = attack + "/" + budget_tag(budget) + "/" + std::to_string(trial_seed);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    PoisonPair pair;
    pair.train = std::make_shared<const Dataset>(
        craft_search_poison(m_, search_train_, attack, budget, trial_seed, artifact_dir_));
    pair.val = std::make_shared<const Dataset>(
        craft_search_poison(m_, search_val_, attack, budget, trial_seed, artifact_dir_, "val"));
    cache_.emplace(key, pair);
    return pair;
  }

 private:
  const ExperimentManifest& m_;
  const Dataset& search_train_;
  const Dataset& search_val_;
  std::filesystem::path artifact_dir_;
  std::mutex mu_;
  std::map<std::string, PoisonPair> cache_;
};

struct TaskSpec {
  std::string condition;
  std::string algorithm;
  std::string attack = "clean";
  double budget = 0.0;
  std::string defense;
  std::size_t seed_index = 0;
};

void run_parallel(std::size_t workers, std::size_t count,
                  const std::function<void(std::size_t)>& work) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t spawn = std::min(workers, count);
  for (std::size_t w = 0; w < spawn; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        work(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

// Everything a worker needs to execute one trial. The ood splits alias the
// primary ones unless a separate search dataset was configured.
struct TrialContext {
  const ExperimentManifest& m;
  const Dataset& search_train;
  const Dataset& search_val;
  const Dataset& ood_train;
  const Dataset& ood_val;
  const Dataset& final_train;
  const Dataset& test;
  PoisonCache& poisons;
  double baseline_mean = 0.0;
};

SearchResult dispatch_search(const ExperimentManifest& m, const std::string& algorithm,
                             const Dataset& search_train, const Dataset& search_val,
                             std::uint64_t trial_seed) {
  if (algorithm == "diff") {
    DiffSearchConfig cfg = m.diff;
    cfg.seed = trial_seed;
    return diff_search(search_train, search_val, cfg);
  }
  if (algorithm == "tf") {
    TfSearchConfig cfg = m.tf;
    cfg.seed = trial_seed;
    return tf_search(search_train, cfg);
  }
  if (algorithm == "hybrid") {
    HybridSearchConfig cfg = m.hybrid;
    cfg.seed = trial_seed;
    return hybrid_search(search_train, search_val, cfg);
  }
  throw ConfigError("unknown algorithm: " + algorithm);
}

TrialRecord run_trial(const TrialContext& ctx, const TaskSpec& task) {
  TrialRecord r;
  r.condition = task.condition;
  r.algorithm = task.algorithm;
  r.attack = task.attack;
  r.budget = task.budget;
  r.defense = task.defense;
  r.seed_index = task.seed_index;
  r.seed = ctx.m.seed_base + task.seed_index;

  try {
    const bool ood = task.attack == "ood";
    auto borrow = [](const Dataset& d) {
      return std::shared_ptr<const Dataset>(&d, [](const Dataset*) {});
    };
    PoisonPair search_data;
    if (task.attack == "clean") {
      search_data = {borrow(ctx.search_train), borrow(ctx.search_val)};
    } else if (ood) {
      search_data = {borrow(ctx.ood_train), borrow(ctx.ood_val)};
    } else {
      search_data = ctx.poisons.get(task.attack, task.budget, r.seed);
    }

    // The defender sees only the (possibly tampered) search data; each half
    // is cleaned on its own.
    Dataset defended_train, defended_val;
    const Dataset* train_side = search_data.train.get();
    const Dataset* val_side = search_data.val.get();
    if (!task.defense.empty()) {
      Rng drng(r.seed);
      auto defend_half = [&](const Dataset& half, const char* role) -> Dataset {
        Rng hrng = drng.derive(role);
        if (task.defense == "loss_sanitize") {
          SanitizationConfig cfg;
          cfg.seed = hrng.derive("defense-sanitize").next();
          return loss_sanitize(half, cfg).kept;
        }
        if (task.defense == "cluster_relabel") {
          Mlp extractor(half.dim(), half.class_count, {32, 32},
                        hrng.derive("defense-extractor").next());
          extractor.fit(half, MlpTrainConfig{.epochs = 30, .batch = 32, .lr = 1e-2},
                        hrng.derive("defense-extractor-fit").next());
          RelabelConfig cfg;
          cfg.seed = hrng.derive("defense-relabel").next();
          return cluster_relabel(half, extractor, cfg);
        }
        throw ConfigError("unknown defense: " + task.defense);
      };
      defended_train = defend_half(*train_side, "defense-train");
      defended_val = defend_half(*val_side, "defense-val");
      train_side = &defended_train;
      val_side = &defended_val;
    }

    const SearchResult sr = dispatch_search(ctx.m, task.algorithm, *train_side, *val_side, r.seed);
    r.search_seconds = sr.wall_seconds;
    if (sr.failed) {
      r.failed = true;
      r.failure_reason = sr.failure_reason;
      return r;
    }
    r.genotype = render_genotype(sr.genotype);
    r.accuracy = retrain_from_scratch(sr.genotype, ctx.final_train, ctx.test, ctx.m.retrain,
                                      r.seed);
    r.delta_imp = delta_imp(r.accuracy, ctx.baseline_mean);
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure_reason = e.what();
    r.genotype.clear();
  }
  return r;
}

// Baseline record b: random architecture + clean retrain, matching
// random_baseline()'s derivation labels exactly.
TrialRecord run_baseline_record(const ExperimentManifest& m, const Dataset& final_train,
                                const Dataset& test, std::size_t index) {
  TrialRecord r;
  r.condition = "baseline";
  r.algorithm = "baseline";
  r.attack = "clean";
  r.seed_index = index;
  r.seed = m.seed_base;
  try {
    Rng base(m.seed_base);
    Rng grng = base.derive("baseline-arch", index);
    const Genotype g = random_genotype(grng);
    r.genotype = render_genotype(g);
    r.accuracy = retrain_from_scratch(g, final_train, test, m.retrain,
                                      base.derive("baseline-seed", index).next());
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure_reason = e.what();
  }
  return r;
}

void sort_records(std::vector<TrialRecord>& records) {
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    if (a.condition != b.condition) return a.condition < b.condition;
    return a.seed_index < b.seed_index;
  });
}

std::vector<double> condition_accuracies(const std::vector<TrialRecord>& records,
                                         const std::string& condition) {
  std::vector<double> out;
  for (const TrialRecord& r : records) {
    if (r.condition == condition && !r.failed) out.push_back(r.accuracy);
  }
  return out;
}

// Welch per algorithm then BH across that algorithm's attack p-values.
std::vector<ConditionTest> compute_tests(const std::vector<TrialRecord>& records,
                                         const ExperimentManifest& m, bool ood_mode) {
  std::vector<ConditionTest> tests;
  for (const std::string& algo : m.algorithms) {
    const std::vector<double> clean = condition_accuracies(records, condition_tag(algo, "clean", 0.0));
    if (clean.size() < 2) continue;
    std::vector<ConditionTest> algo_tests;
    auto add_test = [&](const std::string& attack, double budget, const std::string& tag) {
      const std::vector<double> poisoned = condition_accuracies(records, tag);
      if (poisoned.size() < 2) return;
      ConditionTest t;
      t.algorithm = algo;
      t.attack = attack;
      t.budget = budget;
      t.outcome = welch_one_sided(clean, poisoned);
      t.n_clean = clean.size();
      t.n_poisoned = poisoned.size();
      algo_tests.push_back(t);
    };
    if (ood_mode) {
      add_test("ood", 0.0, condition_tag(algo, "ood", 0.0));
    } else {
      for (const std::string& attack : m.attacks) {
        for (const double budget : m.budgets) {
          add_test(attack, budget, condition_tag(algo, attack, budget));
        }
      }
    }
    if (!algo_tests.empty()) {
      std::vector<double> ps;
      for (const ConditionTest& t : algo_tests) ps.push_back(t.outcome.p);
      const std::vector<bool> rejected = bh_fdr(ps, 0.05);
      for (std::size_t i = 0; i < algo_tests.size(); ++i)
        algo_tests[i].outcome.rejected = rejected[i];
      tests.insert(tests.end(), algo_tests.begin(), algo_tests.end());
    }
  }
  return tests;
}

// Pad cyclically or average-pool feature groups so `source` matches
// `target_dim` columns; used when the OOD source task has different width.
Dataset reconcile_dims(const Dataset& source, std::size_t target_dim) {
  const std::size_t d = source.dim();
  if (d == target_dim) return source;
  Dataset out = source;
  if (d > target_dim) {
    if (d % target_dim != 0)
      throw ConfigError("cannot reconcile feature width " + std::to_string(d) + " to " +
                        std::to_string(target_dim) + ": not divisible");
    const std::size_t group = d / target_dim;
    Tensor f({source.n(), target_dim});
    for (std::size_t i = 0; i < source.n(); ++i) {
      for (std::size_t j = 0; j < target_dim; ++j) {
        double s = 0.0;
        for (std::size_t g = 0; g < group; ++g) s += source.features.at(i, j * group + g);
        f.at(i, j) = s / static_cast<double>(group);
      }
    }
    out.features = std::move(f);
  } else {
    Tensor f({source.n(), target_dim});
    for (std::size_t i = 0; i < source.n(); ++i) {
      for (std::size_t j = 0; j < target_dim; ++j) f.at(i, j) = source.features.at(i, j % d);
    }
    out.features = std::move(f);
  }
  out.name = source.name + "/reconciled";
  return out;
}

struct Prepared {
  std::filesystem::path run_dir;
  std::string hash;
  SplitResult splits;          // of the primary dataset
  SplitResult search_splits;   // of the (possibly OOD) search source
  bool has_ood = false;
};

Prepared prepare(const ExperimentManifest& m, const RunOptions& opts) {
  Prepared p;
  p.hash = manifest_hash(m);
  p.run_dir = run_directory(m, opts);
  std::filesystem::create_directories(p.run_dir);
  {
    std::ofstream mf(p.run_dir / "manifest.json", std::ios::binary);
    mf << render_manifest(m);
  }
  const Dataset primary = realize_dataset(m.dataset);
  p.splits = split(primary, m.split);
  if (m.search_dataset) {
    const Dataset source = reconcile_dims(realize_dataset(*m.search_dataset), primary.dim());
    p.search_splits = split(source, m.split);
    p.has_ood = true;
  }
  return p;
}

RunLedger finish(const ExperimentManifest& m, const Prepared& p, Journal& journal,
                 bool ood_mode) {
  RunLedger ledger;
  ledger.manifest_hash = p.hash;
  ledger.tool_version = kToolVersion;
  ledger.run_dir = p.run_dir;
  ledger.trials = journal.all();
  sort_records(ledger.trials);

  const std::vector<double> base_acc = condition_accuracies(ledger.trials, "baseline");
  if (!base_acc.empty()) {
    const Summary s = summarize(base_acc);
    ledger.baseline_mean = s.mean;
    ledger.baseline_std = s.stddev;
  }
  ledger.tests = compute_tests(ledger.trials, m, ood_mode);
  write_reports(ledger, m);
  return ledger;
}

double run_baselines(const ExperimentManifest& m, const Prepared& p, Journal& journal,
                     const RunOptions& opts) {
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < m.baseline_samples; ++i) {
    if (!journal.has("baseline", i)) pending.push_back(i);
  }
  run_parallel(opts.workers, pending.size(), [&](std::size_t k) {
    journal.append(run_baseline_record(m, p.splits.final_train, p.splits.test, pending[k]));
  });
  const std::vector<double> accs = condition_accuracies(journal.all(), "baseline");
  if (accs.empty()) throw ContractError("audit: every baseline retraining failed");
  return summarize(accs).mean;
}

RunLedger run_matrix(const ExperimentManifest& m, const RunOptions& opts,
                     const std::vector<TaskSpec>& tasks, bool ood_mode) {
  Prepared p = prepare(m, opts);
  Journal journal(p.run_dir / "trials.jsonl", p.hash, opts.resume);

  const double baseline_mean = run_baselines(m, p, journal, opts);

  const SplitResult& ood_side = p.has_ood ? p.search_splits : p.splits;
  PoisonCache poisons(m, p.splits.search_train, p.splits.search_val, p.run_dir / "gc");
  TrialContext ctx{m,
                   p.splits.search_train,
                   p.splits.search_val,
                   ood_side.search_train,
                   ood_side.search_val,
                   p.splits.final_train,
                   p.splits.test,
                   poisons,
                   baseline_mean};

  std::vector<TaskSpec> pending;
  for (const TaskSpec& t : tasks) {
    if (!journal.has(t.condition, t.seed_index)) pending.push_back(t);
  }
  run_parallel(opts.workers, pending.size(),
               [&](std::size_t i) { journal.append(run_trial(ctx, pending[i])); });

  return finish(m, p, journal, ood_mode);
}

std::vector<TaskSpec> audit_tasks(const ExperimentManifest& m, bool ood_mode,
                                  const std::vector<std::string>& defenses) {
  std::vector<TaskSpec> tasks;
  auto push = [&](const std::string& algo, const std::string& attack, double budget,
                  const std::string& defense) {
    for (std::size_t s = 0; s < m.seeds; ++s) {
      TaskSpec t;
      t.condition = condition_tag(algo, attack, budget, defense);
      t.algorithm = algo;
      t.attack = attack;
      t.budget = budget;
      t.defense = defense;
      t.seed_index = s;
      tasks.push_back(t);
    }
  };
  for (const std::string& algo : m.algorithms) {
    if (ood_mode) {
      push(algo, "clean", 0.0, "");
      push(algo, "ood", 0.0, "");
      continue;
    }
    if (defenses.empty()) {
      push(algo, "clean", 0.0, "");
      for (const std::string& attack : m.attacks) {
        for (const double budget : m.budgets) push(algo, attack, budget, "");
      }
    } else {
      for (const std::string& defense : defenses) {
        for (const std::string& attack : m.attacks) {
          for (const double budget : m.budgets) push(algo, attack, budget, defense);
        }
      }
    }
  }
  return tasks;
}

}  // namespace

RunLedger run_audit(const ExperimentManifest& m, const RunOptions& opts) {
  return run_matrix(m, opts, audit_tasks(m, false, {}), false);
}

RunLedger run_ood(const ExperimentManifest& m, const RunOptions& opts) {
  ExperimentManifest eff = m;
  if (!eff.search_dataset) eff.search_dataset = eff.dataset;  // A = B reduction
  return run_matrix(eff, opts, audit_tasks(eff, true, {}), true);
}

RunLedger run_defense(const ExperimentManifest& m, const RunOptions& opts) {
  if (m.defenses.empty()) throw ConfigError("manifest lists no defenses");
  return run_matrix(m, opts, audit_tasks(m, false, m.defenses), false);
}

std::filesystem::path run_sensitivity_files(const ExperimentManifest& m, const RunOptions& opts) {
  const std::filesystem::path run_dir = run_directory(m, opts);
  std::filesystem::create_directories(run_dir);
  {
    std::ofstream mf(run_dir / "manifest.json", std::ios::binary);
    mf << render_manifest(m);
  }

  const Dataset source = realize_dataset(m.dataset);
  SensitivityConfig cfg;
  cfg.n_archs = m.sensitivity.n_archs;
  cfg.clean_points = std::min<std::size_t>(source.n(), 1000);
  cfg.probe_batch = m.sensitivity.probe_batch;
  cfg.p = m.sensitivity.p;
  cfg.epsilon = m.attack_params.epsilon;
  cfg.sigma = m.attack_params.sigma;
  cfg.gc_steps = m.attack_params.gc_steps;
  cfg.seed = m.seed_base;

  std::vector<std::string> attacks = {"identity"};
  attacks.insert(attacks.end(), m.attacks.begin(), m.attacks.end());
  const SensitivityReport report = sensitivity_analysis(source, attacks, cfg);

  std::ofstream csv(run_dir / "sensitivity.csv", std::ios::binary);
  csv << sensitivity_csv(report);
  std::ofstream md(run_dir / "sensitivity.md", std::ios::binary);
  md << sensitivity_markdown(report);
  return run_dir;
}

RunLedger rebuild_ledger(const ExperimentManifest& m, const RunOptions& opts) {
  Prepared p;
  p.hash = manifest_hash(m);
  p.run_dir = run_directory(m, opts);
  if (!std::filesystem::exists(p.run_dir / "trials.jsonl"))
    throw FormatError("no journal found under " + p.run_dir.string());
  Journal journal(p.run_dir / "trials.jsonl", p.hash, true);
  const bool ood_mode = std::any_of(journal.all().begin(), journal.all().end(),
                                    [](const TrialRecord& r) { return r.attack == "ood"; });
  return finish(m, p, journal, ood_mode);
}

}  // namespace nasaudit
