#include "nasaudit/optim.hpp"

#include <cmath>
#include <numbers>

#include "nasaudit/error.hpp"

namespace nasaudit {

double cosine_lr(double lr_max, double lr_min, std::size_t step, std::size_t total) {
  if (total == 0) return lr_min;
  const double frac = static_cast<double>(step > total ? total : step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(const ParamStore& store, ParamGroup group, AdamConfig cfg) : group_(group), cfg_(cfg) {
  m_.reserve(store.count());
  v_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    const bool mine = store.group(i) == group_;
    m_.emplace_back(mine ? store.value(i).shape() : std::vector<std::size_t>{0});
    v_.emplace_back(mine ? store.value(i).shape() : std::vector<std::size_t>{0});
  }
}

void Adam::step(ParamStore& store, const Gradients& grads) { step(store, grads, cfg_.lr); }

void Adam::step(ParamStore& store, const Gradients& grads, double lr_override) {
  if (grads.by_index.size() != store.count() || m_.size() != store.count())
    throw ContractError("adam: gradient/store mismatch");
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store.group(i) == group_ && !grads.by_index[i].all_finite())
      throw NanGradientError("adam: non-finite gradient for " + store.name(i));

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.count(); ++i) {
    if (store.group(i) != group_) continue;
    Tensor& p = store.value(i);
    const Tensor& g = grads.by_index[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m.data()[j] = cfg_.beta1 * m.data()[j] + (1.0 - cfg_.beta1) * g.data()[j];
      v.data()[j] = cfg_.beta2 * v.data()[j] + (1.0 - cfg_.beta2) * g.data()[j] * g.data()[j];
      const double mhat = m.data()[j] / bc1;
      const double vhat = v.data()[j] / bc2;
      p.data()[j] -= lr_override * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Sgd::Sgd(const ParamStore& store, ParamGroup group, double momentum)
    : group_(group), momentum_(momentum) {
  velocity_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i)
    velocity_.emplace_back(store.group(i) == group_ ? store.value(i).shape()
                                                    : std::vector<std::size_t>{0});
}

double clip_grad_norm(Gradients& grads, const ParamStore& store, ParamGroup group,
                      double max_norm) {
  if (grads.by_index.size() != store.count())
    throw ContractError("clip_grad_norm: gradient/store mismatch");
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    if (store.group(i) != group) continue;
    for (const double g : grads.by_index[i].values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (std::size_t i = 0; i < store.count(); ++i) {
      if (store.group(i) != group) continue;
      for (double& g : grads.by_index[i].values()) g *= scale;
    }
  }
  return norm;
}

void Sgd::step(ParamStore& store, const Gradients& grads, double lr) {
  if (grads.by_index.size() != store.count() || velocity_.size() != store.count())
    throw ContractError("sgd: gradient/store mismatch");
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store.group(i) == group_ && !grads.by_index[i].all_finite())
      throw NanGradientError("sgd: non-finite gradient for " + store.name(i));

  for (std::size_t i = 0; i < store.count(); ++i) {
    if (store.group(i) != group_) continue;
    Tensor& p = store.value(i);
    const Tensor& g = grads.by_index[i];
    Tensor& vel = velocity_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      vel.data()[j] = momentum_ * vel.data()[j] + g.data()[j];
      p.data()[j] -= lr * vel.data()[j];
    }
  }
}

}  // namespace nasaudit
