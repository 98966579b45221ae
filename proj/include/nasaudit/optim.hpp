#pragma once

#include <cstdint>
#include <vector>

#include "nasaudit/autodiff.hpp"

namespace nasaudit {

// Cosine decay from lr_max to lr_min over `total` steps.
double cosine_lr(double lr_max, double lr_min, std::size_t step, std::size_t total);

// Rescales the group's gradients in place when their global l2 norm exceeds
// max_norm; returns the pre-clip norm. Keeps deep unnormalized cell stacks
// trainable at momentum-SGD rates.
double clip_grad_norm(Gradients& grads, const ParamStore& store, ParamGroup group,
                      double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one parameter group of a store; other groups are untouched.
// Non-finite gradients in the group abort the step.
class Adam {
 public:
  Adam(const ParamStore& store, ParamGroup group, AdamConfig cfg = {});

  void step(ParamStore& store, const Gradients& grads);
  void step(ParamStore& store, const Gradients& grads, double lr_override);
  std::int64_t steps() const { return t_; }

 private:
  ParamGroup group_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// SGD with classical momentum over one parameter group.
class Sgd {
 public:
  Sgd(const ParamStore& store, ParamGroup group, double momentum = 0.9);

  void step(ParamStore& store, const Gradients& grads, double lr);

 private:
  ParamGroup group_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace nasaudit
