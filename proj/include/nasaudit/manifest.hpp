#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nasaudit/dataset.hpp"
#include "nasaudit/nas_search.hpp"
#include "nasaudit/poison_forge.hpp"

namespace nasaudit {

// How to obtain a dataset: a synthetic generator or files on disk.
struct DatasetSpec {
  std::string kind = "blobs";  // blobs | moons | rings | idx | csv
  // Two clusters per class at antipodal positions put every class mean at the
  // origin, so affine-only genotypes sit near chance while anything with a
  // real nonlinearity clears 90%. Architecture quality, not just optimizer
  // luck, then drives the final accuracy. Linearly separable tasks would hide
  // search-quality changes entirely.
  std::size_t n = 2000;
  std::size_t dim = 16;
  std::size_t classes = 8;
  std::size_t modes = 2;  // clusters per class (blobs only)
  double noise = 1.0;
  std::uint64_t seed = 7;
  std::string features_path;  // idx/csv kinds
  std::string labels_path;    // idx kind
  std::size_t downsample_to = 0;
};

Dataset realize_dataset(const DatasetSpec& spec);

struct AttackParams {
  double epsilon = 16.0;   // l-inf budget, pixel units
  double sigma = 16.0;     // gaussian noise scale
  std::size_t gc_steps = 250;
  double gc_lr = 0.5;
  std::string gc_target = "arch";  // arch | weights
};

struct ExperimentManifest {
  std::string name = "audit";
  DatasetSpec dataset;
  std::optional<DatasetSpec> search_dataset;  // OOD source; absent = in-domain
  SplitSpec split;
  std::vector<std::string> algorithms = {"diff", "tf", "hybrid"};
  std::vector<std::string> attacks = {"rlf", "clf", "gaussian", "gc"};
  std::vector<double> budgets = {0.01, 0.10, 0.50};
  std::size_t seeds = 10;
  std::uint64_t seed_base = 1000;
  std::size_t baseline_samples = 10;
  std::vector<std::string> defenses;  // loss_sanitize | cluster_relabel
  bool augment = false;
  AttackParams attack_params;
  DiffSearchConfig diff;
  TfSearchConfig tf;
  HybridSearchConfig hybrid;
  RetrainConfig retrain;

  struct SensitivityLite {
    std::size_t n_archs = 100;
    std::size_t probe_batch = 8;
    double p = 0.5;
  };
  SensitivityLite sensitivity;
};

// JSON schema round-trip. parse validates invariants and unknown keys.
ExperimentManifest parse_manifest(const std::string& json_text);
ExperimentManifest load_manifest(const std::filesystem::path& path);
std::string render_manifest(const ExperimentManifest& m);

// Identity for resume: SHA-256 over key-sorted, whitespace-free JSON, so
// formatting and key order do not change the hash.
std::string manifest_hash(const std::string& json_text);
std::string manifest_hash(const ExperimentManifest& m);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace nasaudit
