#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nasaudit/manifest.hpp"
#include "nasaudit/nas_search.hpp"
#include "nasaudit/stat_engine.hpp"

namespace nasaudit {

struct RunOptions {
  std::filesystem::path out_root = "runs";
  std::size_t workers = 1;
  bool resume = false;
};

struct TrialRecord {
  std::string condition;  // "diff/rlf/p50", "tf/clean", "hybrid/ood", "baseline"
  std::string algorithm;
  std::string attack = "clean";
  double budget = 0.0;
  std::string defense;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  std::string genotype;
  double search_seconds = 0.0;  // journal only, kept out of canonical CSVs
  double accuracy = 0.0;        // percent, meaningful iff !failed
  double delta_imp = 0.0;
  bool failed = false;
  std::string failure_reason;
};

struct ConditionTest {
  std::string algorithm;
  std::string attack;  // "ood" for the OOD comparison
  double budget = 0.0;
  TestOutcome outcome;
  std::size_t n_clean = 0;
  std::size_t n_poisoned = 0;
};

struct RunLedger {
  std::string manifest_hash;
  std::string tool_version;
  std::filesystem::path run_dir;
  std::vector<TrialRecord> trials;  // sorted by (condition, seed_index)
  std::vector<ConditionTest> tests;
  double baseline_mean = 0.0;
  double baseline_std = 0.0;
};

std::string condition_tag(const std::string& algorithm, const std::string& attack, double budget,
                          const std::string& defense = "");
std::string budget_tag(double budget);  // "p50"

// Poisoned copy of one half of the search split; deterministic in (manifest,
// attack, budget, seed, role). Both halves are attacked: the bi-level
// validation signal is part of the attack surface. role "val" scopes the row
// choices and surrogates; the GC target is shared across roles so one
// adversarial destination drives the whole split. "clean" returns the input.
Dataset craft_search_poison(const ExperimentManifest& m, const Dataset& part,
                            const std::string& attack, double budget, std::uint64_t trial_seed,
                            const std::filesystem::path& artifact_dir,
                            const std::string& role = "train");

// Full matrix: baseline + per algorithm (clean + attacks x budgets) x seeds,
// Welch + BH per algorithm, reports rendered into <out>/<hash>/.
RunLedger run_audit(const ExperimentManifest& m, const RunOptions& opts);

// Search on the manifest's search_dataset, retrain + test on the primary
// dataset; emits the in-domain clean conditions too for comparison.
RunLedger run_ood(const ExperimentManifest& m, const RunOptions& opts);

// Defended conditions: attack -> defense -> search -> clean retrain.
RunLedger run_defense(const ExperimentManifest& m, const RunOptions& opts);

// Metric sensitivity table files (CSV + Markdown) under the run directory.
std::filesystem::path run_sensitivity_files(const ExperimentManifest& m, const RunOptions& opts);

// Re-render reports from the persisted journal without running trials.
RunLedger rebuild_ledger(const ExperimentManifest& m, const RunOptions& opts);

std::filesystem::path run_directory(const ExperimentManifest& m, const RunOptions& opts);

}  // namespace nasaudit
