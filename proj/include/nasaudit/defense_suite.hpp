#pragma once

#include <cstdint>
#include <vector>

#include "nasaudit/dataset.hpp"
#include "nasaudit/mlp.hpp"

namespace nasaudit {

struct KmeansConfig {
  std::size_t max_iters = 100;
  std::size_t restarts = 4;
  std::uint64_t seed = 0;
};

struct KmeansResult {
  std::vector<int> assignments;
  Tensor centroids;  // [k, d]
  double inertia = 0.0;
  std::size_t iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding; empty clusters are reseeded from
// the point farthest from its current centroid. Deterministic per seed;
// best-of-restarts by (inertia, restart index).
KmeansResult kmeans(const Tensor& points, std::size_t k, const KmeansConfig& cfg);

struct SanitizationConfig {
  double discard_fraction = 0.5;  // per class, highest-loss rows
  MlpTrainConfig defender{};
  std::vector<std::size_t> defender_hidden = {32, 32};
  std::uint64_t seed = 0;
};

struct SanitizeResult {
  Dataset kept;                              // original row order preserved
  std::vector<std::size_t> dropped_indices;  // into the input dataset
  std::vector<std::size_t> kept_indices;
};

// Trains a throwaway classifier on the full (possibly poisoned) dataset and
// drops the worst-fit fraction of each class.
SanitizeResult loss_sanitize(const Dataset& dataset, const SanitizationConfig& cfg);

struct RelabelConfig {
  std::size_t k = 0;  // 0 means one cluster per class
  KmeansConfig kmeans{};
  std::uint64_t seed = 0;
};

// k-means over extractor penultimate features; every row takes its cluster's
// majority current label. Original labels survive only through the vote.
Dataset cluster_relabel(const Dataset& dataset, const Mlp& feature_extractor,
                        const RelabelConfig& cfg);

}  // namespace nasaudit
