#include "nasaudit/nas_search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "nasaudit/error.hpp"
#include "nasaudit/optim.hpp"
#include "nasaudit/proxy_metrics.hpp"
#include "nasaudit/rng.hpp"

#include "json.hpp"

namespace nasaudit {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  return idx;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<std::size_t>& idx,
                               std::size_t begin, std::size_t end) {
  std::vector<int> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(data.labels[idx[i]]);
  return out;
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& idx, std::size_t begin,
                               std::size_t end) {
  return {idx.begin() + static_cast<std::ptrdiff_t>(begin),
          idx.begin() + static_cast<std::ptrdiff_t>(end)};
}

// Global-norm gradient clip for weight updates; the unnormalized cell stacks
// otherwise diverge at momentum-SGD rates once they are a few cells deep.
constexpr double kClipNorm = 5.0;

// One forward/backward pass; returns the batch loss and applies `apply`.
double supervised_step(DifferentiableModel& model, const Tensor& pixel_batch,
                       const std::vector<int>& labels,
                       const std::function<void(Gradients&)>& apply) {
  Tape tape;
  const BoundParams bound = bind(tape, model.param_store());
  const Var logits = model.build_logits(tape, bound, tape.leaf(pixel_batch));
  const Var loss = cross_entropy_loss(tape, logits, labels);
  const double loss_value = tape.value(loss)[0];
  if (!std::isfinite(loss_value)) throw NanGradientError("training loss is not finite");
  tape.backward(loss);
  Gradients grads = collect_gradients(tape, bound, model.param_store());
  apply(grads);
  return loss_value;
}

}  // namespace

void train_network(NetworkInstance& net, const Dataset& train, std::size_t epochs,
                   std::size_t batch, double lr, double momentum, std::uint64_t seed) {
  if (train.n() == 0 || epochs == 0) return;
  const std::size_t batches = (train.n() + batch - 1) / batch;
  const std::size_t total_steps = epochs * batches;

  Sgd sgd(net.param_store(), ParamGroup::weights, momentum);
  Rng order_rng = Rng(seed).derive("train-order");
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<std::size_t> idx = shuffled_indices(train.n(), order_rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * batch;
      const std::size_t hi = std::min(train.n(), lo + batch);
      const std::vector<std::size_t> rows = slice(idx, lo, hi);
      const Tensor features = train.features.gather_rows(rows);
      const std::vector<int> labels = gather_labels(train, idx, lo, hi);
      const double lr_t = cosine_lr(lr, 0.0, step, total_steps);
      supervised_step(net, features, labels, [&](Gradients& g) {
        clip_grad_norm(g, net.param_store(), ParamGroup::weights, kClipNorm);
        sgd.step(net.param_store(), g, lr_t);
      });
      ++step;
    }
  }
}

SearchResult diff_search(const Dataset& train, const Dataset& val, const DiffSearchConfig& cfg) {
  train.validate();
  val.validate();
  if (cfg.stage_cells.empty()) throw ConfigError("diff_search: need at least one stage");
  if (cfg.stage_drops.size() + 1 != cfg.stage_cells.size())
    throw ConfigError("diff_search: stage_drops must have one entry per stage transition");
  if (cfg.batch == 0) throw ConfigError("diff_search: batch must be positive");

  const auto start = Clock::now();
  SearchResult result;
  result.algorithm = "diff";

  const NormStats stats = compute_norm_stats(train);
  Rng base(cfg.seed);

  // Ops dropped so far, replayed into each stage's fresh (deeper) supernet.
  struct Dropped {
    CellKind kind;
    std::size_t edge;
    OpKind op;
  };
  std::vector<Dropped> dropped;
  Tensor alpha_normal, alpha_reduction;
  bool have_alpha = false;

  Genotype genotype{};
  for (std::size_t stage = 0; stage < cfg.stage_cells.size(); ++stage) {
    SupernetConfig scfg;
    scfg.cells = cfg.stage_cells[stage];
    scfg.width = cfg.width;
    scfg.input_dim = train.dim();
    scfg.classes = train.class_count;
    Supernet supernet(scfg, base.derive("diff-stage", stage).next());
    supernet.set_norm_stats(stats);
    if (have_alpha) {
      supernet.param_store().value_of("alpha.normal") = alpha_normal;
      supernet.param_store().value_of("alpha.reduction") = alpha_reduction;
    }
    for (const Dropped& d : dropped) supernet.drop_op(d.kind, d.edge, d.op);

    const std::size_t batches = (train.n() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = cfg.epochs_per_stage * batches;
    Sgd sgd(supernet.param_store(), ParamGroup::weights, 0.9);
    Adam adam(supernet.param_store(), ParamGroup::arch, {.lr = cfg.alpha_lr});

    Rng train_rng = base.derive("diff-train-order", stage);
    Rng val_rng = base.derive("diff-val-order", stage);
    Rng aug_rng = base.derive("diff-augment", stage);
    std::vector<std::size_t> val_idx = shuffled_indices(val.n(), val_rng);
    std::size_t val_cursor = 0;

    std::vector<double> epoch_losses;
    std::size_t step = 0;
    try {
      for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        const std::vector<std::size_t> idx = shuffled_indices(train.n(), train_rng);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
          const std::size_t lo = b * cfg.batch;
          const std::size_t hi = std::min(train.n(), lo + cfg.batch);
          const std::vector<std::size_t> rows = slice(idx, lo, hi);
          Tensor features = train.features.gather_rows(rows);
          if (cfg.augment.enabled) features = augment(features, cfg.augment, aug_rng);
          const std::vector<int> labels = gather_labels(train, idx, lo, hi);
          const double lr_t = cosine_lr(cfg.weight_lr, 0.0, step, total_steps);
          loss_sum += supervised_step(supernet, features, labels, [&](Gradients& g) {
            clip_grad_norm(g, supernet.param_store(), ParamGroup::weights, kClipNorm);
            sgd.step(supernet.param_store(), g, lr_t);
          });

          // Architecture step on the next validation batch, once theta has
          // warmed up.
          if (epoch >= cfg.alpha_warmup_epochs) {
            std::vector<std::size_t> vrows;
            std::vector<int> vlabels;
            for (std::size_t take = 0; take < cfg.batch && val.n() > 0; ++take) {
              if (val_cursor == val.n()) {
                val_idx = shuffled_indices(val.n(), val_rng);
                val_cursor = 0;
              }
              vrows.push_back(val_idx[val_cursor]);
              vlabels.push_back(val.labels[val_idx[val_cursor]]);
              ++val_cursor;
            }
            supervised_step(supernet, val.features.gather_rows(vrows), vlabels,
                            [&](Gradients& g) { adam.step(supernet.param_store(), g); });
          }
          ++step;
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(batches));
      }
    } catch (const NanGradientError& e) {
      result.failed = true;
      result.failure_reason = "stage " + std::to_string(stage) + " diverged: " + e.what();
      result.stage_losses.push_back(std::move(epoch_losses));
      result.wall_seconds = elapsed_seconds(start);
      return result;
    }
    result.stage_losses.push_back(std::move(epoch_losses));
    if (!result.stage_losses.back().empty())
      result.diagnostics.emplace_back("stage" + std::to_string(stage) + "_final_loss",
                                      result.stage_losses.back().back());

    // Mean top softmax weight per edge; 1/active_count means alpha never
    // moved and discretization would be a coin flip.
    double sharpness = 0.0;
    for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
      for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
        const std::vector<double> w = supernet.edge_weights(kind, e);
        sharpness += *std::max_element(w.begin(), w.end());
      }
    }
    result.diagnostics.emplace_back("stage" + std::to_string(stage) + "_alpha_sharpness",
                                    sharpness / (2.0 * kEdgesPerCell));

    alpha_normal = supernet.param_store().value_of("alpha.normal");
    alpha_reduction = supernet.param_store().value_of("alpha.reduction");
    have_alpha = true;

    if (stage + 1 < cfg.stage_cells.size()) {
      // Permanently discard the weakest ops per edge before deepening.
      const std::size_t drops = cfg.stage_drops[stage];
      for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
        for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
          if (drops >= supernet.active_count(kind, e))
            throw ConfigError("diff_search: stage drop count would empty an edge");
          for (std::size_t d = 0; d < drops; ++d) {
            const std::vector<double> w = supernet.edge_weights(kind, e);
            double worst = std::numeric_limits<double>::max();
            std::size_t worst_op = 0;
            for (std::size_t o = 0; o < kOpCount; ++o) {
              if (!supernet.op_active(kind, e, static_cast<OpKind>(o))) continue;
              if (w[o] < worst) {
                worst = w[o];
                worst_op = o;
              }
            }
            supernet.drop_op(kind, e, static_cast<OpKind>(worst_op));
            dropped.push_back(Dropped{kind, e, static_cast<OpKind>(worst_op)});
          }
        }
      }
    } else {
      genotype = supernet.discretize();
    }
  }

  result.genotype = genotype;
  result.wall_seconds = elapsed_seconds(start);
  return result;
}

SearchResult tf_search(const Dataset& search_data, const TfSearchConfig& cfg) {
  search_data.validate();
  if (cfg.probe_batch < 2 || cfg.probe_set < 2)
    throw ConfigError("tf_search: probe sizes must be at least 2");
  if (cfg.draws == 0) throw ConfigError("tf_search: need at least one init draw");

  const auto start = Clock::now();
  SearchResult result;
  result.algorithm = "tf";

  Rng base(cfg.seed);
  SupernetConfig scfg;
  scfg.cells = cfg.cells;
  scfg.width = cfg.width;
  scfg.input_dim = search_data.dim();
  scfg.classes = search_data.class_count;
  Supernet supernet(scfg, base.derive("tf-supernet").next());
  supernet.set_norm_stats(compute_norm_stats(search_data));

  // Fixed probe rows; labels are never read.
  Rng probe_rng = base.derive("tf-probe");
  std::vector<std::size_t> rows = shuffled_indices(search_data.n(), probe_rng);
  const std::size_t kappa_rows = std::min(cfg.probe_batch, search_data.n());
  const std::size_t region_rows = std::min(cfg.probe_set, search_data.n());
  const Tensor kappa_probe = search_data.features.gather_rows(slice(rows, 0, kappa_rows));
  const Tensor region_probe = search_data.features.gather_rows(slice(rows, 0, region_rows));

  struct Candidate {
    CellKind kind;
    std::size_t edge;
    OpKind op;
    double kappa_sum = 0.0;
    std::size_t kappa_ok = 0;
    double regions_sum = 0.0;
  };

  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    std::vector<Candidate> candidates;
    for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
      for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
        if (supernet.active_count(kind, e) <= 1) continue;
        std::size_t non_none = 0;
        for (std::size_t o = 1; o < kOpCount; ++o)
          if (supernet.op_active(kind, e, static_cast<OpKind>(o))) ++non_none;
        for (std::size_t o = 0; o < kOpCount; ++o) {
          const auto op = static_cast<OpKind>(o);
          if (!supernet.op_active(kind, e, op)) continue;
          // Never strand an edge with only `none`: it could not be realized.
          if (op != OpKind::none && non_none == 1) continue;
          candidates.push_back(Candidate{kind, e, op});
        }
      }
    }
    if (candidates.empty()) break;

    for (std::size_t draw = 0; draw < cfg.draws; ++draw) {
      supernet.reinit_weights(base.derive("tf-init", round * cfg.draws + draw).next());
      for (Candidate& c : candidates) {
        supernet.set_op_active(c.kind, c.edge, c.op, false);
        const MetricResult kappa = ntk_condition_number(supernet, kappa_probe);
        const MetricResult regions = linear_regions(supernet, region_probe);
        supernet.set_op_active(c.kind, c.edge, c.op, true);
        if (!kappa.unstable) {
          c.kappa_sum += kappa.value;
          c.kappa_ok += 1;
        }
        c.regions_sum += regions.value;
      }
    }

    std::vector<double> kappa_mean(candidates.size()), regions_mean(candidates.size());
    bool any_stable = false;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      kappa_mean[i] = candidates[i].kappa_ok > 0
                          ? candidates[i].kappa_sum / static_cast<double>(candidates[i].kappa_ok)
                          : inf;
      regions_mean[i] = candidates[i].regions_sum / static_cast<double>(cfg.draws);
      any_stable = any_stable || candidates[i].kappa_ok > 0;
    }
    if (!any_stable) {
      result.failed = true;
      result.failure_reason = "round " + std::to_string(round) + ": NTK Gram singular for every candidate";
      result.wall_seconds = elapsed_seconds(start);
      return result;
    }

    // Global ranks: lower kappa better, higher region count better.
    std::vector<std::size_t> rank_kappa(candidates.size()), rank_regions(candidates.size());
    {
      std::vector<std::size_t> order(candidates.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (kappa_mean[a] != kappa_mean[b]) return kappa_mean[a] < kappa_mean[b];
        return a < b;
      });
      for (std::size_t pos = 0; pos < order.size(); ++pos) rank_kappa[order[pos]] = pos;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (regions_mean[a] != regions_mean[b]) return regions_mean[a] > regions_mean[b];
        return a < b;
      });
      for (std::size_t pos = 0; pos < order.size(); ++pos) rank_regions[order[pos]] = pos;
    }

    // Per edge, prune the candidate whose removal ranks best overall.
    for (const CellKind kind : {CellKind::normal, CellKind::reduction}) {
      for (std::size_t e = 0; e < kEdgesPerCell; ++e) {
        std::size_t best = candidates.size();
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          if (candidates[i].kind != kind || candidates[i].edge != e) continue;
          const std::size_t r = rank_kappa[i] + rank_regions[i];
          if (r < best_rank ||
              (r == best_rank && best < candidates.size() &&
               candidates[i].op < candidates[best].op)) {
            best_rank = r;
            best = i;
          }
        }
        if (best < candidates.size())
          supernet.drop_op(kind, e, candidates[best].op);
      }
    }
    result.diagnostics.emplace_back("round" + std::to_string(round) + "_candidates",
                                    static_cast<double>(candidates.size()));
  }

  result.genotype = supernet.discretize();
  result.wall_seconds = elapsed_seconds(start);
  return result;
}

std::vector<double> rank_normalize(const std::vector<double>& values,
                                   const std::vector<bool>& unstable) {
  const std::size_t n = values.size();
  if (unstable.size() != n) throw ContractError("rank_normalize: flag length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (unstable[a] != unstable[b]) return unstable[a];  // unstable first (lowest rank)
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });
  std::vector<double> rank(n, 0.0);
  for (std::size_t pos = 0; pos < n; ++pos)
    rank[order[pos]] = unstable[order[pos]]
                           ? 0.0
                           : (n > 1 ? static_cast<double>(pos) / static_cast<double>(n - 1) : 1.0);
  return rank;
}

std::size_t weighted_argmax(const std::vector<std::vector<double>>& rank_rows,
                            const std::vector<double>& weights) {
  if (rank_rows.empty()) throw ContractError("weighted_argmax: empty candidate set");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rank_rows.size(); ++i) {
    if (rank_rows[i].size() != weights.size())
      throw ContractError("weighted_argmax: weight length mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) s += weights[j] * rank_rows[i][j];
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

SearchResult hybrid_search(const Dataset& search_data, const Dataset& val,
                           const HybridSearchConfig& cfg) {
  search_data.validate();
  val.validate();
  if (cfg.pool == 0) throw ConfigError("hybrid_search: candidate pool must be nonempty");
  if (cfg.rounds == 0) throw ConfigError("hybrid_search: need at least one round");
  if (cfg.metrics.empty()) throw ConfigError("hybrid_search: metric set must be nonempty");

  const auto start = Clock::now();
  SearchResult result;
  result.algorithm = "hybrid";

  Rng base(cfg.seed);
  const NormStats stats = compute_norm_stats(search_data);

  Rng probe_rng = base.derive("hybrid-probe");
  std::vector<std::size_t> rows = shuffled_indices(search_data.n(), probe_rng);
  const std::size_t take = std::min(cfg.probe_batch, search_data.n());
  const Tensor probe = search_data.features.gather_rows(slice(rows, 0, take));
  std::vector<int> probe_labels = gather_labels(search_data, rows, 0, take);

  // Candidate pool with per-metric scores at a fresh init.
  std::vector<Genotype> pool;
  std::vector<std::vector<double>> metric_values(cfg.metrics.size());
  std::vector<std::vector<bool>> metric_unstable(cfg.metrics.size());
  for (std::size_t k = 0; k < cfg.pool; ++k) {
    Rng grng = base.derive("hybrid-arch", k);
    pool.push_back(random_genotype(grng));
    NetworkInstance net = instantiate(pool.back(), cfg.cells, cfg.width,
                                      search_data.class_count, search_data.dim(),
                                      base.derive("hybrid-init", k).next());
    net.set_norm_stats(stats);
    const LossScores scores = loss_based_scores(net, probe, probe_labels);
    for (std::size_t j = 0; j < cfg.metrics.size(); ++j) {
      MetricResult m;
      const std::string& name = cfg.metrics[j];
      if (name == "grad_norm") {
        m = scores.grad_norm;
      } else if (name == "snip") {
        m = scores.snip;
      } else if (name == "grasp") {
        m = scores.grasp;
      } else if (name == "fisher") {
        m = scores.fisher;
      } else if (name == "kappa_ntk") {
        MetricResult kappa = ntk_condition_number(net, probe);
        // Lower condition number is better; flip so ranks agree.
        m = MetricResult{-kappa.value, kappa.unstable};
      } else if (name == "linear_regions") {
        m = linear_regions(net, probe);
      } else {
        throw ConfigError("hybrid_search: unknown metric " + name);
      }
      metric_values[j].push_back(m.value);
      metric_unstable[j].push_back(m.unstable);
    }
  }

  std::vector<std::vector<double>> rank_rows(cfg.pool, std::vector<double>(cfg.metrics.size()));
  for (std::size_t j = 0; j < cfg.metrics.size(); ++j) {
    const std::vector<double> r = rank_normalize(metric_values[j], metric_unstable[j]);
    for (std::size_t k = 0; k < cfg.pool; ++k) rank_rows[k][j] = r[k];
  }

  // Weight-vector search with short-training feedback; accuracy per candidate
  // is cached so repeat selections cost nothing.
  std::vector<double> cached_acc(cfg.pool, std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> diverged(cfg.pool, false);
  Rng weight_rng = base.derive("hybrid-weights");
  double best_acc = -std::numeric_limits<double>::infinity();
  std::size_t best_candidate = 0;
  std::size_t attempts = 0, failures = 0;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const std::vector<double> w = weight_rng.simplex(cfg.metrics.size());
    const std::size_t pick = weighted_argmax(rank_rows, w);
    if (std::isnan(cached_acc[pick]) && !diverged[pick]) {
      ++attempts;
      NetworkInstance net = instantiate(pool[pick], cfg.cells, cfg.width,
                                        search_data.class_count, search_data.dim(),
                                        base.derive("hybrid-shorttrain", pick).next());
      net.set_norm_stats(stats);
      try {
        train_network(net, search_data, cfg.short_epochs, cfg.batch, cfg.lr, 0.9,
                       base.derive("hybrid-shorttrain-order", pick).next());
        cached_acc[pick] = model_accuracy(net, val);
      } catch (const NanGradientError&) {
        diverged[pick] = true;
        ++failures;
      }
    }
    if (!diverged[pick] && cached_acc[pick] > best_acc) {
      best_acc = cached_acc[pick];
      best_candidate = pick;
    }
  }

  if (attempts > 0 && failures == attempts && best_acc == -std::numeric_limits<double>::infinity()) {
    result.failed = true;
    result.failure_reason = "every short-training diverged";
    result.wall_seconds = elapsed_seconds(start);
    return result;
  }

  result.genotype = pool[best_candidate];
  result.diagnostics.emplace_back("best_val_acc", best_acc);
  result.diagnostics.emplace_back("short_trainings", static_cast<double>(attempts));
  result.wall_seconds = elapsed_seconds(start);
  return result;
}

double retrain_from_scratch(const Genotype& genotype, const Dataset& final_train,
                            const Dataset& test, const RetrainConfig& cfg, std::uint64_t seed) {
  final_train.validate();
  test.validate();
  if (final_train.any_poisoned()) {
    throw MethodologyError(
        "retrain_from_scratch: training set contains poisoned rows; retraining must use clean "
        "data so degradation is attributable to the search phase");
  }
  validate_genotype(genotype);

  Rng rng(seed);
  NetworkInstance net = instantiate(genotype, cfg.cells, cfg.width, final_train.class_count,
                                    final_train.dim(), rng.derive("retrain-init").next());
  net.set_norm_stats(compute_norm_stats(final_train));
  train_network(net, final_train, cfg.epochs, cfg.batch, cfg.lr, cfg.momentum,
                 rng.derive("retrain").next());
  return model_accuracy(net, test);
}

RandomBaselineResult random_baseline(const Dataset& final_train, const Dataset& test,
                                     std::size_t samples, const RetrainConfig& retrain,
                                     std::uint64_t seed) {
  if (samples < 2) throw ConfigError("random_baseline: need at least 2 samples");
  Rng base(seed);
  RandomBaselineResult out;
  for (std::size_t r = 0; r < samples; ++r) {
    Rng grng = base.derive("baseline-arch", r);
    out.genotypes.push_back(random_genotype(grng));
    out.accuracies.push_back(retrain_from_scratch(out.genotypes.back(), final_train, test,
                                                  retrain, base.derive("baseline-seed", r).next()));
  }
  const double n = static_cast<double>(samples);
  out.mean = std::accumulate(out.accuracies.begin(), out.accuracies.end(), 0.0) / n;
  double ss = 0.0;
  for (const double a : out.accuracies) ss += (a - out.mean) * (a - out.mean);
  out.stddev = std::sqrt(ss / (n - 1.0));
  return out;
}

std::string search_result_json(const SearchResult& result) {
  nlohmann::ordered_json j;
  j["algorithm"] = result.algorithm;
  j["failed"] = result.failed;
  if (result.failed) j["failure_reason"] = result.failure_reason;
  j["genotype"] = result.failed ? "" : render_genotype(result.genotype);
  j["wall_seconds"] = result.wall_seconds;
  nlohmann::ordered_json diag = nlohmann::ordered_json::object();
  for (const auto& [k, v] : result.diagnostics) diag[k] = v;
  j["diagnostics"] = diag;
  j["stage_losses"] = result.stage_losses;
  return j.dump(2) + "\n";
}

std::string loss_curve_csv(const SearchResult& result) {
  std::ostringstream out;
  out << "stage,epoch,mean_train_loss\n";
  char buf[64];
  for (std::size_t s = 0; s < result.stage_losses.size(); ++s) {
    for (std::size_t e = 0; e < result.stage_losses[s].size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%.17g", result.stage_losses[s][e]);
      out << s << ',' << e << ',' << buf << '\n';
    }
  }
  return out.str();
}

}  // namespace nasaudit
