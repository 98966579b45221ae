#include "nasaudit/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nasaudit/error.hpp"
#include "nasaudit/optim.hpp"
#include "nasaudit/rng.hpp"

namespace nasaudit {

Mlp::Mlp(std::size_t input_dim, std::size_t classes, std::vector<std::size_t> hidden,
         std::uint64_t seed)
    : input_dim_(input_dim), classes_(classes), hidden_(std::move(hidden)) {
  if (input_dim_ == 0 || classes_ < 2) throw ConfigError("mlp: bad dimensions");
  Rng rng = Rng(seed).derive("mlp-init");
  auto he = [&rng](std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    const double s = std::sqrt(2.0 / static_cast<double>(rows));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = s * rng.normal();
    return t;
  };
  std::size_t in = input_dim_;
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    store_.add("h" + std::to_string(l) + ".W", he(in, hidden_[l]));
    store_.add("h" + std::to_string(l) + ".b", Tensor({hidden_[l]}));
    in = hidden_[l];
  }
  store_.add("out.W", he(in, classes_));
  store_.add("out.b", Tensor({classes_}));
}

Var Mlp::build_penultimate(Tape& tape, const BoundParams& bound, Var pixel_input) const {
  auto param = [&](const std::string& name) {
    const int idx = store_.index_of(name);
    if (idx < 0) throw ContractError("mlp: missing parameter " + name);
    return bound.vars[static_cast<std::size_t>(idx)];
  };
  Var x = pixel_input;
  if (norm_) {
    const std::size_t d = norm_->mean.size();
    Tensor inv({d}), shift({d});
    for (std::size_t j = 0; j < d; ++j) {
      inv.data()[j] = 1.0 / norm_->stddev[j];
      shift.data()[j] = -norm_->mean[j] / norm_->stddev[j];
    }
    x = tape.add(tape.mul(x, tape.leaf(std::move(inv))), tape.leaf(std::move(shift)));
  }
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    const std::string p = "h" + std::to_string(l);
    x = tape.relu(tape.add(tape.matmul(x, param(p + ".W")), param(p + ".b")));
  }
  return x;
}

Var Mlp::build_logits(Tape& tape, const BoundParams& bound, Var pixel_input) const {
  auto param = [&](const std::string& name) {
    return bound.vars[static_cast<std::size_t>(store_.index_of(name))];
  };
  Var x = build_penultimate(tape, bound, pixel_input);
  return tape.add(tape.matmul(x, param("out.W")), param("out.b"));
}

void Mlp::fit(const Dataset& train, const MlpTrainConfig& cfg, std::uint64_t seed) {
  if (train.dim() != input_dim_) throw ShapeError("mlp fit: dimension mismatch");
  set_norm_stats(compute_norm_stats(train));
  Adam opt(store_, ParamGroup::weights, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng = Rng(seed).derive("mlp-fit");
  std::vector<std::size_t> order(train.n());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      Tape tape;
      BoundParams bound = bind(tape, store_);
      Var input = tape.leaf(train.features.gather_rows(idx));
      Var loss = cross_entropy_loss(tape, build_logits(tape, bound, input), labels);
      tape.backward(loss);
      Gradients g = collect_gradients(tape, bound, store_);
      opt.step(store_, g);
    }
  }
}

Tensor Mlp::logits(const Tensor& pixel_batch) const {
  Tape tape;
  BoundParams bound = bind(tape, store_);
  Var input = tape.leaf(pixel_batch);
  return tape.value(build_logits(tape, bound, input));
}

Tensor Mlp::penultimate(const Tensor& pixel_batch) const {
  Tape tape;
  BoundParams bound = bind(tape, store_);
  Var input = tape.leaf(pixel_batch);
  return tape.value(build_penultimate(tape, bound, input));
}

double Mlp::accuracy(const Dataset& data) const {
  const Tensor lg = logits(data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < lg.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < lg.cols(); ++c)
      if (lg.at(i, c) > lg.at(i, best)) best = c;
    hits += static_cast<int>(best) == data.labels[i];
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(lg.rows());
}

std::vector<double> Mlp::per_sample_loss(const Dataset& data) const {
  const Tensor lg = logits(data.features);
  std::vector<double> out(lg.rows());
  for (std::size_t i = 0; i < lg.rows(); ++i) {
    double mx = lg.at(i, 0);
    for (std::size_t c = 1; c < lg.cols(); ++c) mx = std::max(mx, lg.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < lg.cols(); ++c) z += std::exp(lg.at(i, c) - mx);
    const double logp = lg.at(i, static_cast<std::size_t>(data.labels[i])) - mx - std::log(z);
    out[i] = -logp;
  }
  return out;
}

}  // namespace nasaudit
