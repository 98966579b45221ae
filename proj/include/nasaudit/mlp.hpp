#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nasaudit/autodiff.hpp"
#include "nasaudit/dataset.hpp"

namespace nasaudit {

struct MlpTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 1e-2;  // Adam
};

// Plain feed-forward relu net on pixel-unit inputs; empty hidden list gives a
// linear (logistic-regression) classifier.
class Mlp : public DifferentiableModel {
 public:
  Mlp(std::size_t input_dim, std::size_t classes, std::vector<std::size_t> hidden,
      std::uint64_t seed);

  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const override;

  // Activations after the last hidden layer (== input affine when no hidden).
  Var build_penultimate(Tape& tape, const BoundParams& bound, Var pixel_input) const;

  void set_norm_stats(NormStats stats) { norm_ = std::move(stats); }

  // Adam on cross-entropy; normalization stats are taken from `train`.
  void fit(const Dataset& train, const MlpTrainConfig& cfg, std::uint64_t seed);

  Tensor logits(const Tensor& pixel_batch) const;
  Tensor penultimate(const Tensor& pixel_batch) const;
  double accuracy(const Dataset& data) const;  // percent
  std::vector<double> per_sample_loss(const Dataset& data) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t classes() const { return classes_; }

 private:
  std::size_t input_dim_;
  std::size_t classes_;
  std::vector<std::size_t> hidden_;
  ParamStore store_;
  std::optional<NormStats> norm_;
};

}  // namespace nasaudit
