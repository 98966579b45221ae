#include "nasaudit/proxy_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "nasaudit/error.hpp"
#include "nasaudit/mlp.hpp"
#include "nasaudit/poison_forge.hpp"

namespace nasaudit {

const char* const kMetricNames[kMetricCount] = {"kappa_ntk", "linear_regions", "grad_norm",
                                                "snip",      "grasp",          "fisher"};

MetricResult MetricVector::by_index(std::size_t i) const {
  switch (i) {
    case 0: return kappa;
    case 1: return regions;
    case 2: return grad_norm;
    case 3: return snip;
    case 4: return grasp;
    case 5: return fisher;
  }
  throw ContractError("metric index out of range");
}

std::vector<double> symmetric_eigenvalues(Tensor a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw ShapeError("symmetric_eigenvalues: need a square matrix, got " + a.shape_string());
  const std::size_t n = a.rows();
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max(scale, std::abs(a.data()[i]));
  if (scale == 0.0) return std::vector<double>(n, 0.0);

  // Cyclic Jacobi sweeps until the off-diagonal mass is negligible.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (std::sqrt(off) < 1e-13 * scale * static_cast<double>(n)) break;

    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

MetricResult ntk_condition_number(const DifferentiableModel& net, const Tensor& probe_batch) {
  const std::size_t m = probe_batch.rows();
  if (m < 2) throw ContractError("ntk: probe batch must hold at least 2 samples");
  const ParamStore& store = net.param_store();

  Tape tape;
  BoundParams bound = bind(tape, store);
  Var input = tape.leaf(probe_batch);
  Var logits = net.build_logits(tape, bound, input);
  const std::size_t c = tape.value(logits).cols();

  // Per-sample gradient of the summed logits, via a row-mask backward each.
  std::vector<std::vector<double>> grads(m);
  for (std::size_t i = 0; i < m; ++i) {
    Tensor mask({m, c});
    for (std::size_t j = 0; j < c; ++j) mask.at(i, j) = 1.0;
    Var s = tape.sum(tape.mul(logits, tape.leaf(std::move(mask))));
    tape.backward(s);
    Gradients g = collect_gradients(tape, bound, store);
    grads[i] = g.flatten(store, ParamGroup::weights);
  }

  Tensor gram({m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < grads[i].size(); ++k) acc += grads[i][k] * grads[j][k];
      gram.at(i, j) = acc;
      gram.at(j, i) = acc;
    }

  auto kappa_of = [m](const std::vector<double>& eig) -> MetricResult {
    const double lmin = eig.front(), lmax = eig[m - 1];
    if (lmin <= 0.0) return MetricResult{0.0, true};
    return MetricResult{lmax / lmin, false};
  };

  MetricResult r = kappa_of(symmetric_eigenvalues(gram));
  if (r.unstable) {
    Tensor jittered = gram;
    for (std::size_t i = 0; i < m; ++i) jittered.at(i, i) += 1e-8;
    r = kappa_of(symmetric_eigenvalues(jittered));
    // A degenerate Gram stays flagged: the rescued value is a jitter
    // artifact, even though it is finite and usable for ranking.
    r.unstable = true;
  }
  return r;
}

MetricResult linear_regions(const DifferentiableModel& net, const Tensor& probe_set) {
  const std::size_t m = probe_set.rows();
  Tape tape;
  BoundParams bound = bind(tape, net.param_store());
  Var input = tape.leaf(probe_set);
  (void)net.build_logits(tape, bound, input);

  // Sign pattern per probe across every relu pre-activation on the tape.
  std::vector<std::string> patterns(m);
  for (const Var relu : tape.nodes_with_op(Op::relu)) {
    const Tensor& pre = tape.value(tape.parent_of(relu));
    const std::size_t cols = pre.rank() == 2 ? pre.cols() : pre.size();
    const std::size_t rows = pre.rank() == 2 ? pre.rows() : 1;
    if (rows != m) continue;  // parameter-only subgraphs are not probe-driven
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        patterns[i].push_back(pre.data()[i * cols + j] > 0.0 ? '1' : '0');
  }

  std::unordered_set<std::string> distinct(patterns.begin(), patterns.end());
  return MetricResult{static_cast<double>(distinct.size()), false};
}

LossScores loss_based_scores(const DifferentiableModel& net, const Tensor& batch,
                             const std::vector<int>& labels) {
  const ParamStore& store = net.param_store();
  Tape tape;
  BoundParams bound = bind(tape, store);
  Var input = tape.leaf(batch);
  Var logits = net.build_logits(tape, bound, input);
  Var loss = cross_entropy_loss(tape, logits, labels);
  tape.backward(loss);
  Gradients grads = collect_gradients(tape, bound, store);
  const std::vector<double> g = grads.flatten(store, ParamGroup::weights);
  const std::vector<double> theta = store.flatten(ParamGroup::weights);

  LossScores out;
  double sq = 0.0, snip = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    sq += g[i] * g[i];
    snip += std::abs(theta[i] * g[i]);
  }
  out.grad_norm.value = std::sqrt(sq);
  out.snip.value = snip;

  // fisher: per activation output feature, (sum_batch a * dL/da)^2.
  double fisher = 0.0;
  for (const Op act : {Op::relu, Op::tanh_act, Op::sigmoid}) {
    for (const Var v : tape.nodes_with_op(act)) {
      const Tensor& a = tape.value(v);
      const Tensor& da = tape.grad(v);
      const std::size_t cols = a.rank() == 2 ? a.cols() : a.size();
      const std::size_t rows = a.rank() == 2 ? a.rows() : 1;
      if (rows != batch.rows()) continue;
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += a.data()[i * cols + j] * da.data()[i * cols + j];
        fisher += s * s;
      }
    }
  }
  out.fisher.value = fisher;

  // grasp: -(Hg) . theta with the Hessian-vector product taken by central
  // difference along the normalized gradient direction.
  const double gnorm = out.grad_norm.value;
  double grasp = 0.0;
  if (gnorm > 0.0 && std::isfinite(gnorm)) {
    const double h = 1e-3;
    ParamStore shifted = store;
    auto grad_at = [&](double scale) {
      std::vector<double> flat = store.flatten(ParamGroup::weights);
      for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += scale * g[i] / gnorm;
      shifted.unflatten(ParamGroup::weights, flat);
      Tape t2;
      BoundParams b2 = bind(t2, shifted);
      Var in2 = t2.leaf(batch);
      Var l2 = cross_entropy_loss(t2, net.build_logits(t2, b2, in2), labels);
      t2.backward(l2);
      return collect_gradients(t2, b2, shifted).flatten(shifted, ParamGroup::weights);
    };
    const std::vector<double> up = grad_at(h);
    const std::vector<double> dn = grad_at(-h);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double hg = gnorm * (up[i] - dn[i]) / (2.0 * h);
      grasp += -hg * theta[i];
    }
  }
  out.grasp.value = grasp;

  for (MetricResult* r : {&out.grad_norm, &out.snip, &out.grasp, &out.fisher})
    if (!std::isfinite(r->value)) *r = MetricResult{0.0, true};
  return out;
}

MetricVector compute_all_metrics(const DifferentiableModel& net, const Tensor& probe_features,
                                 const std::vector<int>& probe_labels, std::size_t loss_batch) {
  MetricVector mv;
  const std::size_t m = probe_features.rows();
  const std::size_t k = std::min(loss_batch, m);
  std::vector<std::size_t> head(k);
  std::iota(head.begin(), head.end(), 0);
  const Tensor small = probe_features.gather_rows(head);
  std::vector<int> small_labels(probe_labels.begin(),
                                probe_labels.begin() + static_cast<std::ptrdiff_t>(k));

  mv.kappa = ntk_condition_number(net, small);
  mv.regions = linear_regions(net, probe_features);
  const LossScores ls = loss_based_scores(net, small, small_labels);
  mv.grad_norm = ls.grad_norm;
  mv.snip = ls.snip;
  mv.grasp = ls.grasp;
  mv.fisher = ls.fisher;
  return mv;
}

namespace {

Dataset apply_named_attack(const std::string& attack, const Dataset& clean,
                           const SensitivityConfig& cfg) {
  Rng rng(cfg.seed + 1000003);
  if (attack == "identity") return clean;
  if (attack == "rlf") return rlf(clean, cfg.p, rng);
  if (attack == "clf") {
    Mlp surrogate(clean.dim(), clean.class_count, {32, 32}, cfg.seed);
    MlpTrainConfig tc;
    tc.epochs = 30;
    surrogate.fit(clean, tc, cfg.seed);
    return clf(clean, cfg.p, surrogate);
  }
  if (attack == "gaussian") return gaussian_noise(clean, cfg.p, cfg.sigma, cfg.epsilon, rng);
  if (attack == "gc") {
    Mlp victim(clean.dim(), clean.class_count, {32, 32}, cfg.seed);
    MlpTrainConfig tc;
    tc.epochs = 30;
    victim.fit(clean, tc, cfg.seed);
    const std::size_t batch_n = std::min<std::size_t>(clean.n(), 256);
    std::vector<std::size_t> rows(batch_n);
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> labels(batch_n);
    for (std::size_t i = 0; i < batch_n; ++i) labels[i] = clean.labels[rows[i]];
    gradpc_targets(victim, clean.features.gather_rows(rows), labels, ParamGroup::weights);
    GcConfig gc;
    gc.steps = cfg.gc_steps;
    gc.epsilon = cfg.epsilon;
    gc.seed = cfg.seed;
    return gradient_canceling(victim, clean, cfg.p, gc).poisoned;
  }
  throw ConfigError("sensitivity: unknown attack " + attack);
}

}  // namespace

SensitivityReport sensitivity_analysis(const Dataset& source,
                                       const std::vector<std::string>& attacks,
                                       const SensitivityConfig& cfg) {
  if (cfg.n_archs == 0) throw ConfigError("sensitivity: n_archs must be positive");
  source.validate();

  // Fixed probe indices: identical inputs on the clean and poisoned side.
  Rng rng = Rng(cfg.seed).derive("sensitivity");
  const std::size_t points = std::min(cfg.clean_points, source.n());
  std::vector<std::size_t> all(source.n());
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  all.resize(points);
  std::sort(all.begin(), all.end());

  std::vector<Genotype> archs(cfg.n_archs);
  std::vector<std::uint64_t> arch_seeds(cfg.n_archs);
  for (std::size_t a = 0; a < cfg.n_archs; ++a) {
    Rng ar = rng.derive("arch", a);
    archs[a] = random_genotype(ar);
    arch_seeds[a] = ar.next();
  }

  auto metrics_on = [&](const Dataset& data, std::size_t a) {
    NetworkInstance net(archs[a], InstanceConfig{cfg.cells, cfg.width, data.dim(),
                                                 data.class_count},
                        arch_seeds[a]);
    net.set_norm_stats(compute_norm_stats(data));
    const Tensor probe = data.features.gather_rows(all);
    std::vector<int> labels(points);
    for (std::size_t i = 0; i < points; ++i) labels[i] = data.labels[all[i]];
    return compute_all_metrics(net, probe, labels, cfg.probe_batch);
  };

  std::vector<MetricVector> clean_by_arch(cfg.n_archs);
  for (std::size_t a = 0; a < cfg.n_archs; ++a) clean_by_arch[a] = metrics_on(source, a);

  SensitivityReport report;
  report.attacks = attacks;
  report.n_archs = cfg.n_archs;
  for (const std::string& attack : attacks) {
    const Dataset poisoned = apply_named_attack(attack, source, cfg);
    std::array<std::vector<double>, kMetricCount> changes;
    std::array<std::size_t, kMetricCount> excluded{};
    for (std::size_t a = 0; a < cfg.n_archs; ++a) {
      const MetricVector pv = metrics_on(poisoned, a);
      for (std::size_t mi = 0; mi < kMetricCount; ++mi) {
        const MetricResult cl = clean_by_arch[a].by_index(mi);
        const MetricResult po = pv.by_index(mi);
        if (cl.unstable || po.unstable || cl.value == 0.0) {
          ++excluded[mi];
          continue;
        }
        changes[mi].push_back(100.0 * (po.value - cl.value) / std::abs(cl.value));
      }
    }
    std::array<SensitivityCell, kMetricCount> row;
    for (std::size_t mi = 0; mi < kMetricCount; ++mi) {
      SensitivityCell cell;
      cell.excluded = excluded[mi];
      const std::vector<double>& v = changes[mi];
      if (!v.empty()) {
        double mean = 0.0;
        for (const double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (const double x : v) var += (x - mean) * (x - mean);
        cell.mean_pct = mean;
        cell.std_pct = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      }
      row[mi] = cell;
    }
    report.cells.push_back(row);
  }
  return report;
}

namespace {

std::string cell_text(const SensitivityCell& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f%%", c.mean_pct, c.std_pct);
  return buf;
}

}  // namespace

std::string sensitivity_csv(const SensitivityReport& report) {
  std::ostringstream os;
  os << "attack";
  for (std::size_t mi = 0; mi < kMetricCount; ++mi) os << ',' << kMetricNames[mi];
  os << '\n';
  for (std::size_t r = 0; r < report.attacks.size(); ++r) {
    os << report.attacks[r];
    for (std::size_t mi = 0; mi < kMetricCount; ++mi)
      os << ",\"" << cell_text(report.cells[r][mi]) << '"';
    os << '\n';
  }
  return os.str();
}

std::string sensitivity_markdown(const SensitivityReport& report) {
  std::ostringstream os;
  os << "| attack |";
  for (std::size_t mi = 0; mi < kMetricCount; ++mi) os << ' ' << kMetricNames[mi] << " |";
  os << "\n|---|";
  for (std::size_t mi = 0; mi < kMetricCount; ++mi) os << "---|";
  os << '\n';
  for (std::size_t r = 0; r < report.attacks.size(); ++r) {
    os << "| " << report.attacks[r] << " |";
    for (std::size_t mi = 0; mi < kMetricCount; ++mi)
      os << ' ' << cell_text(report.cells[r][mi]) << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace nasaudit
