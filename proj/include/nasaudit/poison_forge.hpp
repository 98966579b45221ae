#pragma once

#include <cstdint>
#include <vector>

#include "nasaudit/dataset.hpp"
#include "nasaudit/mlp.hpp"
#include "nasaudit/optim.hpp"
#include "nasaudit/rng.hpp"

namespace nasaudit {

std::size_t poison_count_for(std::size_t n, double p);  // floor(n*p), validates p

// Random label flipping: floor(n*p) uniformly chosen rows get a uniform
// label among the other C-1 classes.
Dataset rlf(const Dataset& dataset, double p, Rng& rng);

// Confidence-based flipping: rank rows by max surrogate logit descending,
// flip the top floor(n*p) to their argmin-logit class (second-least-confident
// when the argmin equals the current label).
Dataset clf(const Dataset& dataset, double p, const Mlp& surrogate);

Dataset gaussian_noise(const Dataset& dataset, double p, double sigma, double epsilon, Rng& rng);

struct GradPcResult {
  std::vector<double> theta_before;  // flattened target group
  std::vector<double> theta_after;
  double loss_before = 0.0;
  double loss_after = 0.0;
  bool increased = false;
};

// Bounded sign-gradient ascent on cross-entropy over the selected parameter
// group; per-tensor l-inf bound = bound_scale * rms(initial values).
GradPcResult gradpc_targets(DifferentiableModel& net, const Tensor& batch_features,
                            const std::vector<int>& labels, ParamGroup group,
                            double bound_scale = 0.5, std::size_t steps = 10);

struct GcConfig {
  std::size_t steps = 250;
  double lr = 0.5;  // Adam on the pixel-space perturbation
  double epsilon = 16.0;
  ParamGroup target_group = ParamGroup::weights;
  std::size_t early_stop_patience = 50;
  std::uint64_t seed = 0;
};

struct GcResult {
  Dataset poisoned;
  std::vector<std::size_t> poison_indices;
  std::vector<double> loss_trajectory;  // entry 0 is the loss at delta = 0
  double initial_loss = 0.0;
  double final_loss = 0.0;  // best loss reached
  bool early_stopped = false;
};

// Gradient canceling against the parameters currently installed in `net`
// (the adversarial target): minimizes 1/2 || (1-p) g_clean + p g_adv ||^2
// over an l-inf-bounded pixel perturbation of a random row subset.
GcResult gradient_canceling(const DifferentiableModel& net, const Dataset& dataset, double p,
                            const GcConfig& cfg);

enum class GcTargetKind { architectural_params, model_weights };
GcTargetKind gc_target_kind_from(const std::string& s);

// NAS-specific pipeline: GradPC on the selected group of the prerequisite
// artifact (supernet alpha, or a clean-trained final network's weights),
// then gradient canceling against the perturbed target.
GcResult nas_gc(GcTargetKind kind, DifferentiableModel* supernet,
                DifferentiableModel* final_net, const Dataset& dataset, double p,
                const GcConfig& cfg);

std::string gc_trajectory_csv(const GcResult& result);

}  // namespace nasaudit
