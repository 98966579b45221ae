#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nasaudit/rng.hpp"
#include "nasaudit/tensor.hpp"

namespace nasaudit {

// Labeled sample set. Features stay in pixel units [0,255] until a caller
// normalizes them, so l-inf budgets like 16 keep their intended scale.
struct Dataset {
  Tensor features;                    // [n, d]
  std::vector<int> labels;            // n values in [0, class_count)
  std::size_t class_count = 0;
  std::vector<std::uint8_t> poison_mask;  // 1 = row was tampered with
  std::string name;

  std::size_t n() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }
  std::size_t poison_count() const;
  bool any_poisoned() const { return poison_count() > 0; }

  Dataset subset(const std::vector<std::size_t>& indices, std::string new_name) const;
  void validate() const;  // throws ContractError on broken invariants
};

enum class SyntheticKind { blobs, moons, rings };

SyntheticKind synthetic_kind_from(const std::string& s);
const char* synthetic_kind_name(SyntheticKind k);

// Class-balanced synthetic task, deterministic per seed. `noise` scales the
// within-class spread; 1.0 is the calibrated default difficulty. `modes` is
// the number of Gaussian clusters per class (blobs only): with modes >= 2 the
// clusters of each class sit at roots-of-unity angles in a per-class random
// plane, so every class mean coincides at the origin and no affine model can
// separate the classes. That makes architecture quality, not just training,
// show up in the final accuracy.
Dataset generate_synthetic(SyntheticKind kind, std::size_t n, std::size_t d, std::size_t C,
                           std::uint64_t seed, double noise = 1.0, std::size_t modes = 1);

// IDX ubyte pair. downsample_to > 0 average-pools square images to
// downsample_to x downsample_to before flattening.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t downsample_to = 0);

struct SplitSpec {
  double search_train = 0.4;
  double search_val = 0.1;
  double final_train = 0.4;
  double test = 0.1;
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset search_train;
  Dataset search_val;
  Dataset final_train;
  Dataset test;
};

// Stratified, disjoint, exhaustive; per-class counts within 1 of proportional.
SplitResult split(const Dataset& dataset, const SplitSpec& spec);

struct AugmentationSpec {
  bool enabled = false;
  double jitter_sigma = 0.0;   // pixel units
  double mask_prob = 0.0;      // per-feature zeroing probability
  int shift_range = 0;         // grid data only
  bool horizontal_flip = false;  // grid data only
};

// Label-preserving perturbation of a feature batch, clipped to [0,255].
Tensor augment(const Tensor& batch, const AugmentationSpec& spec, Rng& rng);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;                 // clamped to 1 where variance was 0
  std::vector<std::size_t> clamped_features;  // which features got clamped
};

NormStats compute_norm_stats(const Dataset& stats_from);
Tensor apply_norm(const Tensor& pixels, const NormStats& stats);
Tensor invert_norm(const Tensor& standardized, const NormStats& stats);
Dataset normalize(const Dataset& dataset, const NormStats& stats);

// CSV with header f0..f{d-1},label. Poisoned sets carry a JSON sidecar.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

struct PoisonSidecar {
  std::string attack;
  double p = 0.0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> mask_indices;
};

void save_poison_sidecar(const PoisonSidecar& sidecar, const std::filesystem::path& path);
PoisonSidecar load_poison_sidecar(const std::filesystem::path& path);

// Convenience: dataset CSV plus "<stem>.poison.json" sidecar when any row is marked.
void export_poisoned(const Dataset& dataset, const PoisonSidecar& sidecar,
                     const std::filesystem::path& csv_path);

}  // namespace nasaudit
