#include "nasaudit/poison_forge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "nasaudit/error.hpp"

namespace nasaudit {

std::size_t poison_count_for(std::size_t n, double p) {
  if (p <= 0.0 || p > 1.0) throw ConfigError("poison budget p must be in (0,1]");
  return static_cast<std::size_t>(static_cast<double>(n) * p);
}

namespace {

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

Dataset rlf(const Dataset& dataset, double p, Rng& rng) {
  if (dataset.class_count < 2) throw ConfigError("rlf: need at least 2 classes");
  const std::size_t count = poison_count_for(dataset.n(), p);
  Dataset out = dataset;
  Rng local = rng.derive("rlf");
  for (const std::size_t i : sample_rows(dataset.n(), count, local)) {
    const int orig = out.labels[i];
    // Uniform over the C-1 alternatives, never the original.
    int flipped = static_cast<int>(local.bounded(dataset.class_count - 1));
    if (flipped >= orig) ++flipped;
    out.labels[i] = flipped;
    out.poison_mask[i] = 1;
  }
  out.name = dataset.name + "+rlf";
  return out;
}

Dataset clf(const Dataset& dataset, double p, const Mlp& surrogate) {
  if (dataset.class_count < 2) throw ConfigError("clf: need at least 2 classes");
  const std::size_t count = poison_count_for(dataset.n(), p);
  const Tensor logits = surrogate.logits(dataset.features);
  if (logits.cols() != dataset.class_count) throw ShapeError("clf: surrogate class mismatch");

  // Sort by max logit, descending; ties keep the earlier row.
  std::vector<std::size_t> order(dataset.n());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> conf(dataset.n());
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(i, c));
    conf[i] = mx;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&conf](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });

  Dataset out = dataset;
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t i = order[r];
    std::size_t least = 0, second = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(i, c) < logits.at(i, least)) least = c;
    double best = 1e300;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (c == least) continue;
      if (logits.at(i, c) < best) {
        best = logits.at(i, c);
        second = c;
      }
    }
    const int target = static_cast<int>(least) == out.labels[i] ? static_cast<int>(second)
                                                                : static_cast<int>(least);
    out.labels[i] = target;
    out.poison_mask[i] = 1;
  }
  out.name = dataset.name + "+clf";
  return out;
}

Dataset gaussian_noise(const Dataset& dataset, double p, double sigma, double epsilon, Rng& rng) {
  if (sigma < 0.0 || epsilon < 0.0) throw ConfigError("gaussian_noise: negative sigma/epsilon");
  const std::size_t count = poison_count_for(dataset.n(), p);
  Dataset out = dataset;
  Rng local = rng.derive("gaussian");
  const std::size_t d = dataset.dim();
  for (const std::size_t i : sample_rows(dataset.n(), count, local)) {
    for (std::size_t j = 0; j < d; ++j) {
      double delta = sigma * local.normal();
      delta = std::clamp(delta, -epsilon, epsilon);
      out.features.at(i, j) = std::clamp(dataset.features.at(i, j) + delta, 0.0, 255.0);
    }
    out.poison_mask[i] = 1;
  }
  out.name = dataset.name + "+gaussian";
  return out;
}

namespace {

double batch_loss(const DifferentiableModel& net, const Tensor& features,
                  const std::vector<int>& labels) {
  Tape tape;
  BoundParams bound = bind(tape, net.param_store());
  Var input = tape.leaf(features);
  Var loss = cross_entropy_loss(tape, net.build_logits(tape, bound, input), labels);
  return tape.value(loss)[0];
}

// Gradient of mean cross-entropy w.r.t. one parameter group, flattened.
std::vector<double> group_gradient(const DifferentiableModel& net, const Tensor& features,
                                   const std::vector<int>& labels, ParamGroup group) {
  Tape tape;
  BoundParams bound = bind(tape, net.param_store());
  Var input = tape.leaf(features);
  Var loss = cross_entropy_loss(tape, net.build_logits(tape, bound, input), labels);
  tape.backward(loss);
  Gradients g = collect_gradients(tape, bound, net.param_store());
  return g.flatten(net.param_store(), group);
}

}  // namespace

GradPcResult gradpc_targets(DifferentiableModel& net, const Tensor& batch_features,
                            const std::vector<int>& labels, ParamGroup group, double bound_scale,
                            std::size_t steps) {
  if (bound_scale < 0.0) throw ConfigError("gradpc: negative bound");
  ParamStore& store = net.param_store();

  GradPcResult result;
  result.theta_before = store.flatten(group);
  result.loss_before = batch_loss(net, batch_features, labels);

  // Per-tensor bound in units of that tensor's initial rms magnitude.
  std::vector<double> bounds(store.count(), 0.0);
  for (std::size_t i = 0; i < store.count(); ++i) {
    if (store.group(i) != group) continue;
    const Tensor& t = store.value(i);
    double rms = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) rms += t.data()[j] * t.data()[j];
    rms = t.size() ? std::sqrt(rms / static_cast<double>(t.size())) : 0.0;
    if (rms <= 0.0) rms = 1.0;  // zero-initialized tensors still get a budget
    bounds[i] = bound_scale * rms;
  }

  std::vector<Tensor> origin;
  origin.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) origin.push_back(store.value(i));

  for (std::size_t step = 0; step < steps && bound_scale > 0.0; ++step) {
    Tape tape;
    BoundParams bound = bind(tape, store);
    Var input = tape.leaf(batch_features);
    Var loss = cross_entropy_loss(tape, net.build_logits(tape, bound, input), labels);
    tape.backward(loss);
    Gradients g = collect_gradients(tape, bound, store);
    for (std::size_t i = 0; i < store.count(); ++i) {
      if (store.group(i) != group) continue;
      Tensor& t = store.value(i);
      const double stride = bounds[i] / static_cast<double>(steps);
      for (std::size_t j = 0; j < t.size(); ++j) {
        const double gj = g.by_index[i].data()[j];
        const double dir = gj > 0.0 ? 1.0 : (gj < 0.0 ? -1.0 : 0.0);
        double v = t.data()[j] + stride * dir;  // ascent: increase the loss
        v = std::clamp(v, origin[i].data()[j] - bounds[i], origin[i].data()[j] + bounds[i]);
        t.data()[j] = v;
      }
    }
  }

  result.theta_after = store.flatten(group);
  result.loss_after = batch_loss(net, batch_features, labels);
  result.increased = result.loss_after > result.loss_before;
  return result;
}

GcResult gradient_canceling(const DifferentiableModel& net, const Dataset& dataset, double p,
                            const GcConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("gc: steps must be >= 1");
  if (cfg.epsilon < 0.0) throw ConfigError("gc: negative epsilon");
  const std::size_t count = poison_count_for(dataset.n(), p);
  if (count == 0) throw ConfigError("gc: budget selects zero rows");
  const ParamStore& store = net.param_store();
  const std::size_t d = dataset.dim();

  Rng rng = Rng(cfg.seed).derive("gc-subset");
  GcResult result;
  result.poison_indices = sample_rows(dataset.n(), count, rng);

  std::vector<std::uint8_t> in_subset(dataset.n(), 0);
  for (const std::size_t i : result.poison_indices) in_subset[i] = 1;
  std::vector<std::size_t> clean_rows;
  for (std::size_t i = 0; i < dataset.n(); ++i)
    if (!in_subset[i]) clean_rows.push_back(i);

  std::vector<int> poison_labels(count);
  for (std::size_t i = 0; i < count; ++i)
    poison_labels[i] = dataset.labels[result.poison_indices[i]];
  const Tensor poison_x0 = dataset.features.gather_rows(result.poison_indices);

  // g_clean over the untouched remainder, evaluated once (empty at p = 1).
  std::vector<double> g_clean(store.scalar_count(cfg.target_group), 0.0);
  if (!clean_rows.empty()) {
    std::vector<int> clean_labels(clean_rows.size());
    for (std::size_t i = 0; i < clean_rows.size(); ++i)
      clean_labels[i] = dataset.labels[clean_rows[i]];
    g_clean = group_gradient(net, dataset.features.gather_rows(clean_rows), clean_labels,
                             cfg.target_group);
  }

  // Gradient of mean poison-batch CE w.r.t. the pixel inputs, at parameters
  // shifted by `shift` along the target group.
  ParamStore shifted = store;  // value copy; net's own store stays untouched
  auto input_grad_at_shift = [&](const Tensor& px, const std::vector<double>& direction,
                                 double scale) {
    std::vector<double> flat = store.flatten(cfg.target_group);
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += scale * direction[i];
    shifted.unflatten(cfg.target_group, flat);
    Tape tape;
    BoundParams bound = bind(tape, shifted);
    Var input = tape.leaf(px);
    Var loss = cross_entropy_loss(tape, net.build_logits(tape, bound, input), poison_labels);
    tape.backward(loss);
    return tape.grad(input);
  };

  auto canceling_loss = [&](const Tensor& px, std::vector<double>& r_out) {
    const std::vector<double> g_adv = group_gradient(net, px, poison_labels, cfg.target_group);
    double loss = 0.0;
    r_out.resize(g_clean.size());
    for (std::size_t i = 0; i < g_clean.size(); ++i) {
      r_out[i] = (1.0 - p) * g_clean[i] + p * g_adv[i];
      loss += r_out[i] * r_out[i];
    }
    return 0.5 * loss;
  };

  Tensor delta({count, d});
  Tensor best_delta = delta;
  ParamStore delta_store;
  delta_store.add("delta", delta);
  Adam opt(delta_store, ParamGroup::weights, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  auto poisoned_px = [&](const Tensor& dlt) {
    Tensor px = poison_x0;
    for (std::size_t i = 0; i < px.size(); ++i)
      px.data()[i] = std::clamp(px.data()[i] + dlt.data()[i], 0.0, 255.0);
    return px;
  };

  std::vector<double> r;
  double best_loss = canceling_loss(poison_x0, r);
  result.initial_loss = best_loss;
  result.loss_trajectory.push_back(best_loss);

  const double fd_h = 1e-3;
  std::size_t since_improvement = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor& cur = delta_store.value(0);
    const Tensor px = poisoned_px(cur);
    const double loss = canceling_loss(px, r);
    if (step > 0) result.loss_trajectory.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_delta = cur;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }

    double r_norm = 0.0;
    for (const double v : r) r_norm += v * v;
    r_norm = std::sqrt(r_norm);
    if (r_norm <= 1e-15) break;  // loss is already ~0

    // d/d(delta) of <grad_theta phi, r> by central difference along r.
    const double fd_eps = fd_h / r_norm;
    const Tensor g_up = input_grad_at_shift(px, r, fd_eps);
    const Tensor g_dn = input_grad_at_shift(px, r, -fd_eps);
    Gradients dg;
    dg.by_index.emplace_back(cur.shape());
    for (std::size_t i = 0; i < cur.size(); ++i)
      dg.by_index[0].data()[i] = p * (g_up.data()[i] - g_dn.data()[i]) / (2.0 * fd_eps);

    opt.step(delta_store, dg);

    // Project: l-inf ball, then keep x + delta inside pixel range.
    Tensor& nxt = delta_store.value(0);
    for (std::size_t i = 0; i < nxt.size(); ++i) {
      double v = std::clamp(nxt.data()[i], -cfg.epsilon, cfg.epsilon);
      v = std::clamp(poison_x0.data()[i] + v, 0.0, 255.0) - poison_x0.data()[i];
      nxt.data()[i] = v;
    }
  }

  {  // final candidate may beat the incumbent
    std::vector<double> r_final;
    const double loss = canceling_loss(poisoned_px(delta_store.value(0)), r_final);
    result.loss_trajectory.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_delta = delta_store.value(0);
    }
  }
  result.final_loss = best_loss;

  result.poisoned = dataset;
  const Tensor px = poisoned_px(best_delta);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t row = result.poison_indices[i];
    for (std::size_t j = 0; j < d; ++j) result.poisoned.features.at(row, j) = px.at(i, j);
    result.poisoned.poison_mask[row] = 1;
  }
  result.poisoned.name = dataset.name + "+gc";
  return result;
}

GcTargetKind gc_target_kind_from(const std::string& s) {
  if (s == "architectural_params") return GcTargetKind::architectural_params;
  if (s == "model_weights") return GcTargetKind::model_weights;
  throw ConfigError("unknown gc target kind: " + s);
}

GcResult nas_gc(GcTargetKind kind, DifferentiableModel* supernet, DifferentiableModel* final_net,
                const Dataset& dataset, double p, const GcConfig& cfg) {
  DifferentiableModel* victim = nullptr;
  ParamGroup group = ParamGroup::weights;
  if (kind == GcTargetKind::architectural_params) {
    if (supernet == nullptr)
      throw ConfigError("nas_gc: architectural target needs a converged supernet");
    victim = supernet;
    group = ParamGroup::arch;
  } else {
    if (final_net == nullptr)
      throw ConfigError("nas_gc: weight target needs a clean-trained final network");
    victim = final_net;
    group = ParamGroup::weights;
  }

  // GradPC destination on a capped crafting batch, then cancel toward it.
  Rng rng = Rng(cfg.seed).derive("nas-gc-batch");
  const std::size_t batch_n = std::min<std::size_t>(dataset.n(), 256);
  std::vector<std::size_t> rows = sample_rows(dataset.n(), batch_n, rng);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = dataset.labels[rows[i]];
  gradpc_targets(*victim, dataset.features.gather_rows(rows), labels, group);

  GcConfig inner = cfg;
  inner.target_group = group;
  return gradient_canceling(*victim, dataset, p, inner);
}

std::string gc_trajectory_csv(const GcResult& result) {
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < result.loss_trajectory.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", result.loss_trajectory[i]);
    os << i << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace nasaudit
