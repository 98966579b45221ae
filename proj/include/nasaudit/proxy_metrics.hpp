#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasaudit/autodiff.hpp"
#include "nasaudit/dataset.hpp"
#include "nasaudit/search_space.hpp"

namespace nasaudit {

struct MetricResult {
  double value = 0.0;
  bool unstable = false;
};

// Table-3-style metric column order.
inline constexpr std::size_t kMetricCount = 6;
extern const char* const kMetricNames[kMetricCount];  // kappa_ntk, linear_regions, grad_norm, snip, grasp, fisher

struct MetricVector {
  MetricResult kappa;
  MetricResult regions;
  MetricResult grad_norm;
  MetricResult snip;
  MetricResult grasp;
  MetricResult fisher;

  MetricResult by_index(std::size_t i) const;
};

// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(Tensor a);

// Condition number of the per-sample-gradient Gram matrix. Gradients are of
// summed logits w.r.t. the weights group; labels are never consumed.
MetricResult ntk_condition_number(const DifferentiableModel& net, const Tensor& probe_batch);

// Distinct relu pre-activation sign patterns over the probe set.
MetricResult linear_regions(const DifferentiableModel& net, const Tensor& probe_set);

struct LossScores {
  MetricResult grad_norm;
  MetricResult snip;
  MetricResult grasp;
  MetricResult fisher;
};

LossScores loss_based_scores(const DifferentiableModel& net, const Tensor& batch,
                             const std::vector<int>& labels);

MetricVector compute_all_metrics(const DifferentiableModel& net, const Tensor& probe_features,
                                 const std::vector<int>& probe_labels, std::size_t loss_batch);

struct SensitivityConfig {
  std::size_t n_archs = 100;
  std::size_t clean_points = 1000;
  std::size_t probe_batch = 8;  // kappa + loss-score batch
  std::size_t cells = 4;
  std::size_t width = 16;
  double p = 0.5;  // fixed budget for the sensitivity table
  double epsilon = 16.0;
  double sigma = 16.0;
  std::size_t gc_steps = 250;
  std::uint64_t seed = 0;
};

struct SensitivityCell {
  double mean_pct = 0.0;
  double std_pct = 0.0;
  std::size_t excluded = 0;  // unstable or zero-clean-value instances
};

struct SensitivityReport {
  std::vector<std::string> attacks;
  std::vector<std::array<SensitivityCell, kMetricCount>> cells;  // row per attack
  std::size_t n_archs = 0;
};

// Percentage change of each metric under each attack, same architectures and
// same probe indices on both sides; change = 100*(poisoned - clean)/|clean|.
SensitivityReport sensitivity_analysis(const Dataset& source,
                                       const std::vector<std::string>& attacks,
                                       const SensitivityConfig& cfg);

std::string sensitivity_csv(const SensitivityReport& report);
std::string sensitivity_markdown(const SensitivityReport& report);

}  // namespace nasaudit
