#include "nasaudit/defense_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nasaudit/error.hpp"
#include "nasaudit/rng.hpp"

namespace nasaudit {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

// k-means++: first centroid uniform, then proportional to squared distance
// from the nearest already-chosen centroid.
Tensor kmeanspp_init(const Tensor& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  Tensor centroids({k, d});
  std::vector<double> best(n, std::numeric_limits<double>::max());

  const auto first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
  for (std::size_t j = 0; j < d; ++j) centroids.at(0, j) = points.at(first, j);

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dist = sq_dist(points.data() + i * d, centroids.data() + (c - 1) * d, d);
      if (dist < best[i]) best[i] = dist;
      total += best[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform_pos() * total;
      double acc = 0.0;
      chosen = n - 1;  // guard against rounding past the end
      for (std::size_t i = 0; i < n; ++i) {
        acc += best[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(n) - 1));  // all points coincide with a centroid
    }
    for (std::size_t j = 0; j < d; ++j) centroids.at(c, j) = points.at(chosen, j);
  }
  return centroids;
}

KmeansResult lloyd(const Tensor& points, std::size_t k, std::size_t max_iters, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();

  KmeansResult result;
  result.centroids = kmeanspp_init(points, k, rng);
  result.assignments.assign(n, 0);

  std::vector<double> dist_to_own(n, 0.0);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = (iter == 0);
    for (std::size_t i = 0; i < n; ++i) {
      double nearest = std::numeric_limits<double>::max();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = sq_dist(points.data() + i * d, result.centroids.data() + c * d, d);
        if (dist < nearest) {
          nearest = dist;
          arg = static_cast<int>(c);
        }
      }
      if (arg != result.assignments[i]) changed = true;
      result.assignments[i] = arg;
      dist_to_own[i] = nearest;
    }
    result.iterations = iter + 1;
    if (!changed) break;

    std::vector<std::size_t> counts(k, 0);
    Tensor sums({k, d});
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(result.assignments[i]);
      counts[c] += 1;
      for (std::size_t j = 0; j < d; ++j) sums.at(c, j) += points.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed the empty cluster from the point farthest from its centroid.
        std::size_t farthest = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist_to_own[i] > dist_to_own[farthest]) farthest = i;
        }
        for (std::size_t j = 0; j < d; ++j)
          result.centroids.at(c, j) = points.at(farthest, j);
        dist_to_own[farthest] = 0.0;
      } else {
        for (std::size_t j = 0; j < d; ++j)
          result.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
      }
    }
  }

  result.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(result.assignments[i]);
    result.inertia += sq_dist(points.data() + i * d, result.centroids.data() + c * d, d);
  }
  return result;
}

}  // namespace

KmeansResult kmeans(const Tensor& points, std::size_t k, const KmeansConfig& cfg) {
  const std::size_t n = points.rows();
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (n < k) {
    throw ContractError("kmeans: need at least k=" + std::to_string(k) + " points, got " +
                        std::to_string(n));
  }
  const std::size_t restarts = std::max<std::size_t>(1, cfg.restarts);

  Rng base(cfg.seed);
  KmeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = base.derive("kmeans-restart", r);
    KmeansResult candidate = lloyd(points, k, std::max<std::size_t>(1, cfg.max_iters), rng);
    if (!have || candidate.inertia < best.inertia) {
      best = std::move(candidate);
      have = true;
    }
  }
  return best;
}

SanitizeResult loss_sanitize(const Dataset& dataset, const SanitizationConfig& cfg) {
  dataset.validate();
  if (cfg.discard_fraction < 0.0 || cfg.discard_fraction >= 1.0)
    throw ConfigError("loss_sanitize: discard_fraction must lie in [0, 1)");

  const std::size_t n = dataset.n();
  SanitizeResult result;

  std::vector<double> losses(n, 0.0);
  if (cfg.discard_fraction > 0.0) {
    Rng rng(cfg.seed);
    Mlp defender(dataset.dim(), dataset.class_count, cfg.defender_hidden,
                 rng.derive("sanitize-defender").next());
    defender.fit(dataset, cfg.defender, rng.derive("sanitize-fit").next());
    losses = defender.per_sample_loss(dataset);
  }

  // Per class keep the best-fit ceil(count * (1 - fraction)) rows.
  std::vector<uint8_t> keep(n, 1);
  for (std::size_t c = 0; c < dataset.class_count; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (dataset.labels[i] == static_cast<int>(c)) members.push_back(i);
    }
    if (members.empty()) continue;
    const auto retained = static_cast<std::size_t>(std::ceil(
        static_cast<double>(members.size()) * (1.0 - cfg.discard_fraction)));
    if (retained == 0) {
      throw ConfigError("loss_sanitize: class " + std::to_string(c) +
                        " would be emptied entirely");
    }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (losses[a] != losses[b]) return losses[a] < losses[b];
      return a < b;
    });
    for (std::size_t r = retained; r < members.size(); ++r) keep[members[r]] = 0;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) {
      result.kept_indices.push_back(i);
    } else {
      result.dropped_indices.push_back(i);
    }
  }
  result.kept = dataset.subset(result.kept_indices,
                               dataset.name.empty() ? "sanitized" : dataset.name + "/sanitized");
  return result;
}

Dataset cluster_relabel(const Dataset& dataset, const Mlp& feature_extractor,
                        const RelabelConfig& cfg) {
  dataset.validate();
  std::size_t k = cfg.k == 0 ? static_cast<std::size_t>(dataset.class_count) : cfg.k;
  if (k < 2) throw ConfigError("cluster_relabel: need k >= 2 clusters");

  const Tensor features = feature_extractor.penultimate(dataset.features);

  KmeansConfig kcfg = cfg.kmeans;
  kcfg.seed = Rng(cfg.seed).derive("relabel-kmeans").next();
  const KmeansResult clusters = kmeans(features, k, kcfg);

  // Majority vote of current labels within each cluster; ties take the
  // smallest label so reruns are deterministic.
  std::vector<int> cluster_label(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> votes(static_cast<std::size_t>(dataset.class_count), 0);
    for (std::size_t i = 0; i < dataset.n(); ++i) {
      if (static_cast<std::size_t>(clusters.assignments[i]) == c)
        votes[static_cast<std::size_t>(dataset.labels[i])] += 1;
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < votes.size(); ++l) {
      if (votes[l] > votes[best]) best = l;
    }
    cluster_label[c] = static_cast<int>(best);
  }

  Dataset out = dataset;
  out.name = dataset.name.empty() ? "relabeled" : dataset.name + "/relabeled";
  for (std::size_t i = 0; i < out.n(); ++i)
    out.labels[i] = cluster_label[static_cast<std::size_t>(clusters.assignments[i])];
  return out;
}

}  // namespace nasaudit
