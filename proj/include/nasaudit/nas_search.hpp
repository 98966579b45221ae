#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nasaudit/dataset.hpp"
#include "nasaudit/search_space.hpp"

namespace nasaudit {

struct DiffSearchConfig {
  std::vector<std::size_t> stage_cells = {4, 6};  // supernet depth per stage
  std::vector<std::size_t> stage_drops = {2};     // ops dropped per edge after each stage
  std::size_t epochs_per_stage = 25;
  // Optional theta-only epochs at the start of each stage. Off by default:
  // measured on the blobs task, delaying alpha lowered final accuracy.
  std::size_t alpha_warmup_epochs = 0;
  double weight_lr = 0.05;  // SGD momentum, cosine decay within each stage
  double alpha_lr = 0.03;  // Adam; alpha must sharpen well past uniform within the stage budget
  std::size_t batch = 32;
  std::size_t width = 16;
  AugmentationSpec augment{};
  std::uint64_t seed = 0;
};

struct TfSearchConfig {
  std::size_t probe_batch = 8;  // NTK Gram size
  std::size_t probe_set = 64;   // linear-region probe rows
  std::size_t rounds = kOpCount - 1;
  std::size_t draws = 3;  // fresh inits averaged per evaluation
  std::size_t cells = 4;
  std::size_t width = 16;
  std::uint64_t seed = 0;
};

struct HybridSearchConfig {
  std::size_t pool = 16;    // candidate genotypes K
  std::size_t rounds = 8;   // weight vectors tried T
  std::size_t short_epochs = 5;
  std::size_t probe_batch = 8;
  std::size_t cells = 6;
  std::size_t width = 16;
  std::size_t batch = 32;
  double lr = 0.05;
  std::vector<std::string> metrics = {"grad_norm", "snip", "grasp", "fisher"};
  std::uint64_t seed = 0;
};

struct RetrainConfig {
  // Long enough that any trainable genotype converges; shorter budgets leave
  // seed-luck noise that swamps the architecture signal.
  std::size_t epochs = 50;
  std::size_t cells = 6;
  std::size_t width = 16;
  std::size_t batch = 32;
  double lr = 0.025;  // SGD momentum, cosine decay to 0
  double momentum = 0.9;
};

struct SearchResult {
  Genotype genotype{};
  std::string algorithm;
  bool failed = false;
  std::string failure_reason;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, double>> diagnostics;
  std::vector<std::vector<double>> stage_losses;  // mean train loss per epoch
};

// Bi-level relaxation search: theta steps on train batches, alpha steps on
// val batches, progressively deeper supernet with per-edge op dropping.
SearchResult diff_search(const Dataset& train, const Dataset& val, const DiffSearchConfig& cfg);

// Training-free pruning by NTK conditioning and linear-region counts.
// Consumes features only; labels never influence the result.
SearchResult tf_search(const Dataset& search_data, const TfSearchConfig& cfg);

// Metric-weighted candidate selection with short-training feedback.
SearchResult hybrid_search(const Dataset& search_data, const Dataset& val,
                           const HybridSearchConfig& cfg);

// SGD+momentum with cosine decay on the weights group; used for short
// training inside hybrid search and for trainable attack victims. Throws
// NanGradientError on divergence.
void train_network(NetworkInstance& net, const Dataset& train, std::size_t epochs,
                   std::size_t batch, double lr, double momentum, std::uint64_t seed);

// Fractional ranks in [0,1], higher value -> higher rank; unstable entries
// pinned to rank 0.
std::vector<double> rank_normalize(const std::vector<double>& values,
                                   const std::vector<bool>& unstable);

// Argmax of the weighted rank score; ties take the lowest index.
std::size_t weighted_argmax(const std::vector<std::vector<double>>& rank_rows,
                            const std::vector<double>& weights);

// From-scratch training of a discrete architecture on clean data. Throws
// MethodologyError if any row of `final_train` is marked poisoned, so
// measured degradation can only come from the search phase.
double retrain_from_scratch(const Genotype& genotype, const Dataset& final_train,
                            const Dataset& test, const RetrainConfig& cfg, std::uint64_t seed);

struct RandomBaselineResult {
  std::vector<Genotype> genotypes;
  std::vector<double> accuracies;  // percent, per sample
  double mean = 0.0;
  double stddev = 0.0;
};

RandomBaselineResult random_baseline(const Dataset& final_train, const Dataset& test,
                                     std::size_t samples, const RetrainConfig& retrain,
                                     std::uint64_t seed);

std::string search_result_json(const SearchResult& result);
std::string loss_curve_csv(const SearchResult& result);

}  // namespace nasaudit
