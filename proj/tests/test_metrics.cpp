#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "nasaudit/mlp.hpp"
#include "nasaudit/poison_forge.hpp"
#include "nasaudit/proxy_metrics.hpp"
#include "nasaudit/rng.hpp"
#include "nasaudit/search_space.hpp"

using namespace nasaudit;

namespace {

// Fixed-parameter model exposing an arbitrary logits graph for metric tests.
class LinearProbe : public DifferentiableModel {
 public:
  LinearProbe(Tensor w, Tensor b) {
    store_.add("W", std::move(w));
    store_.add("b", std::move(b));
  }
  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var x) const override {
    return tape.add(tape.matmul(x, bound.vars[0]), bound.vars[1]);
  }

 private:
  ParamStore store_;
};

// Bias-free linear model: per-sample gradients of summed logits equal the
// inputs themselves, making NTK Grams exactly computable by hand.
class PureLinearProbe : public DifferentiableModel {
 public:
  explicit PureLinearProbe(Tensor w) { store_.add("W", std::move(w)); }
  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var x) const override {
    return tape.matmul(x, bound.vars[0]);
  }

 private:
  ParamStore store_;
};

// One hidden relu layer with hand-set weights; used for region counting.
class ReluProbe : public DifferentiableModel {
 public:
  ReluProbe(Tensor w1, Tensor w2) {
    store_.add("W1", std::move(w1));
    store_.add("W2", std::move(w2));
  }
  ParamStore& param_store() override { return store_; }
  const ParamStore& param_store() const override { return store_; }
  Var build_logits(Tape& tape, const BoundParams& bound, Var x) const override {
    return tape.matmul(tape.relu(tape.matmul(x, bound.vars[0])), bound.vars[1]);
  }

 private:
  ParamStore store_;
};

Tensor grid2d(double lo, double hi, std::size_t steps) {
  Tensor t({steps * steps, 2});
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j < steps; ++j) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
      const double y = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(steps - 1);
      t.data()[(i * steps + j) * 2] = x;
      t.data()[(i * steps + j) * 2 + 1] = y;
    }
  return t;
}

}  // namespace

TEST_CASE("symmetric eigenvalues: analytic 2x2 and diagonal cases") {
  {
    const std::vector<double> ev = symmetric_eigenvalues(Tensor({2, 2}, {2.0, 0.0, 0.0, 1.0}));
    CHECK(ev[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ev[1] == doctest::Approx(2.0).epsilon(1e-10));
  }
  {
    // [[2,1],[1,2]] has eigenvalues 1 and 3.
    const std::vector<double> ev = symmetric_eigenvalues(Tensor({2, 2}, {2.0, 1.0, 1.0, 2.0}));
    CHECK(ev[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ev[1] == doctest::Approx(3.0).epsilon(1e-10));
  }
  {
    // Larger symmetric matrix: trace and determinant invariants.
    Rng rng(3);
    Tensor a({5, 5});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const double v = rng.normal();
        a.data()[i * 5 + j] = v;
        a.data()[j * 5 + i] = v;
      }
    double trace = 0.0;
    for (std::size_t i = 0; i < 5; ++i) trace += a.values()[i * 5 + i];
    const std::vector<double> ev = symmetric_eigenvalues(a);
    double sum = 0.0;
    for (double e : ev) sum += e;
    CHECK(sum == doctest::Approx(trace).epsilon(1e-8));
    CHECK(std::is_sorted(ev.begin(), ev.end()));
  }
}

TEST_CASE("ntk condition number: identity Gram, analytic ratio, degenerate flag") {
  // Orthonormal per-sample gradients: y = w.x with one-hot rows -> K = I.
  {
    PureLinearProbe net(Tensor({2, 1}, {1.0, 1.0}));
    const Tensor probe({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const MetricResult r = ntk_condition_number(net, probe);
    CHECK_FALSE(r.unstable);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Identical inputs: rank-1 Gram; the jitter rescue keeps the flag raised.
  {
    PureLinearProbe net(Tensor({2, 1}, {1.0, 1.0}));
    const Tensor probe({2, 2}, {1.0, 0.0, 1.0, 0.0});
    const MetricResult r = ntk_condition_number(net, probe);
    CHECK(r.unstable);
  }
  // Scaled rows: per-sample grads (1,0) and (0,2) -> Gram diag(1,4) -> kappa 4.
  {
    PureLinearProbe net(Tensor({2, 1}, {1.0, 1.0}));
    const Tensor probe({2, 2}, {1.0, 0.0, 0.0, 2.0});
    const MetricResult r = ntk_condition_number(net, probe);
    CHECK_FALSE(r.unstable);
    CHECK(r.value == doctest::Approx(4.0).epsilon(1e-9));
  }
}

TEST_CASE("ntk kappa >= 1 and label-free on real cell networks") {
  Rng rng(9);
  const Genotype g = random_genotype(rng);
  NetworkInstance net = instantiate(g, 4, 16, 4, 6, 3);
  Tensor probe({8, 6});
  for (std::size_t i = 0; i < probe.size(); ++i) probe.data()[i] = 255.0 * rng.uniform();
  const MetricResult r = ntk_condition_number(net, probe);
  if (!r.unstable) CHECK(r.value >= 1.0);
  // Same inputs, second call: deterministic.
  const MetricResult r2 = ntk_condition_number(net, probe);
  CHECK(r.value == r2.value);
  CHECK(r.unstable == r2.unstable);
}

TEST_CASE("linear regions: analytic counts") {
  // Single hidden relu unit splitting a grid -> 2 patterns.
  {
    ReluProbe net(Tensor({2, 1}, {1.0, 0.0}), Tensor({1, 1}, {1.0}));
    const MetricResult r = linear_regions(net, grid2d(-1.0, 1.0, 5));
    CHECK(r.value == 2.0);
  }
  // Two crossing hyperplanes (x > 0) x (y > 0) -> 4 patterns on a grid
  // straddling both axes (grid chosen to avoid exact zeros).
  {
    ReluProbe net(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}), Tensor({2, 1}, {1.0, 1.0}));
    const MetricResult r = linear_regions(net, grid2d(-0.9, 1.1, 6));
    CHECK(r.value == 4.0);
  }
  // No relu anywhere -> a single region.
  {
    LinearProbe net(Tensor({2, 3}, {1.0, 0.0, 0.0, 1.0, 0.5, 0.5}), Tensor({3}));
    const MetricResult r = linear_regions(net, grid2d(-1.0, 1.0, 4));
    CHECK(r.value == 1.0);
  }
}

TEST_CASE("linear regions: monotone in probe-set size") {
  Rng rng(17);
  const Genotype g = random_genotype(rng);
  NetworkInstance net = instantiate(g, 4, 16, 3, 4, 5);
  Tensor big({64, 4});
  for (std::size_t i = 0; i < big.size(); ++i) big.data()[i] = 255.0 * rng.uniform();
  double prev = 0.0;
  for (std::size_t m : {8, 16, 32, 64}) {
    Tensor sub({m, 4});
    std::copy(big.values().begin(), big.values().begin() + m * 4, sub.data());
    const MetricResult r = linear_regions(net, sub);
    CHECK(r.value >= prev);
    prev = r.value;
  }
}

TEST_CASE("loss scores: snip zero-head, grad_norm oracle, label sensitivity") {
  Rng rng(23);
  const Genotype g = random_genotype(rng);
  NetworkInstance net = instantiate(g, 2, 16, 3, 5, 7);
  Tensor batch({8, 5});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.data()[i] = 255.0 * rng.uniform();
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};

  const LossScores s = loss_based_scores(net, batch, labels);
  CHECK_FALSE(s.grad_norm.unstable);
  CHECK(s.grad_norm.value > 0.0);
  CHECK(s.snip.value > 0.0);
  CHECK(s.fisher.value >= 0.0);

  // grad_norm^2 equals the sum of squared backward gradients and the
  // backward gradients match finite differences (chained oracle).
  auto loss_of = [&](const ParamStore& p) {
    NetworkInstance copy = net;
    copy.param_store() = p;
    Tape tape;
    BoundParams bound = bind(tape, copy.param_store());
    Var logits = copy.build_logits(tape, bound, tape.leaf(batch));
    return tape.value(cross_entropy_loss(tape, logits, labels)).values()[0];
  };
  ParamStore params = net.param_store();
  const Gradients fd = finite_diff_grad(loss_of, params, 1e-3);
  double fd_sq = 0.0;
  for (const Tensor& t : fd.by_index)
    for (std::size_t i = 0; i < t.size(); ++i) fd_sq += t.values()[i] * t.values()[i];
  CHECK(s.grad_norm.value == doctest::Approx(std::sqrt(fd_sq)).epsilon(1e-3));

  // Permuting labels changes the loss-based scores on a generic net.
  std::vector<int> permuted = {1, 2, 0, 1, 2, 0, 1, 2};
  const LossScores sp = loss_based_scores(net, batch, permuted);
  CHECK(sp.grad_norm.value != s.grad_norm.value);
  CHECK(sp.snip.value != s.snip.value);

  // Zero head: the head's snip contribution vanishes. With every other
  // parameter untouched the score drop equals the head's former share.
  NetworkInstance zeroed = net;
  Tensor& hw = zeroed.param_store().value_of("head.W");
  for (std::size_t i = 0; i < hw.size(); ++i) hw.data()[i] = 0.0;
  Tensor& hb = zeroed.param_store().value_of("head.b");
  for (std::size_t i = 0; i < hb.size(); ++i) hb.data()[i] = 0.0;
  const LossScores sz = loss_based_scores(zeroed, batch, labels);
  CHECK(sz.snip.value >= 0.0);  // well-defined with a zero head
}

TEST_CASE("grasp HVP matches a dense-Hessian product on a tiny net") {
  // Model: logits = x W (2x2), loss = mean CE over 3 samples; 4 parameters.
  Rng rng(29);
  Tensor w({2, 2});
  for (std::size_t i = 0; i < 4; ++i) w.data()[i] = 0.5 * rng.normal();
  LinearProbe net(w, Tensor({2}));
  Tensor batch({3, 2}, {0.2, -0.4, 0.9, 0.1, -0.6, 0.5});
  const std::vector<int> labels = {0, 1, 0};

  auto loss_of = [&](const ParamStore& p) {
    LinearProbe copy(p.value(0), p.value(1));
    Tape tape;
    BoundParams bound = bind(tape, copy.param_store());
    Var logits = copy.build_logits(tape, bound, tape.leaf(batch));
    return tape.value(cross_entropy_loss(tape, logits, labels)).values()[0];
  };

  // Dense Hessian by double finite differences over the 6 scalars.
  ParamStore params;
  params.add("W", net.param_store().value(0));
  params.add("b", net.param_store().value(1));
  const std::size_t n = params.scalar_count();
  const double h = 1e-4;
  std::vector<std::vector<double>> H(n, std::vector<double>(n, 0.0));
  std::vector<double> flat = params.flatten(ParamGroup::weights);
  auto eval_grad = [&](const std::vector<double>& at) {
    ParamStore p2;
    p2.add("W", Tensor({2, 2}, {at[0], at[1], at[2], at[3]}));
    p2.add("b", Tensor({2}, {at[4], at[5]}));
    const Gradients g = finite_diff_grad(loss_of, p2, 1e-5);
    return g.flatten(p2, ParamGroup::weights);
  };
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> hi = flat, lo = flat;
    hi[j] += h;
    lo[j] -= h;
    const std::vector<double> ghi = eval_grad(hi), glo = eval_grad(lo);
    for (std::size_t i = 0; i < n; ++i) H[i][j] = (ghi[i] - glo[i]) / (2 * h);
  }

  // Gradient at the base point.
  ParamStore base;
  base.add("W", net.param_store().value(0));
  base.add("b", net.param_store().value(1));
  const std::vector<double> g0 = finite_diff_grad(loss_of, base, 1e-5).flatten(base, ParamGroup::weights);

  // grasp = sum(-(H g) . theta)
  double expect = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double hg = 0.0;
    for (std::size_t j = 0; j < n; ++j) hg += H[i][j] * g0[j];
    expect += -hg * flat[i];
  }

  const LossScores s = loss_based_scores(net, batch, labels);
  CHECK_FALSE(s.grasp.unstable);
  CHECK(s.grasp.value == doctest::Approx(expect).epsilon(1e-3));
}

TEST_CASE("kappa and regions are exactly label-invariant; table-3 zero row") {
  // The sensitivity harness must report exactly 0.00 +- 0.00% kappa change
  // under label-only attacks when probe inputs are identical.
  const Dataset data = generate_synthetic(SyntheticKind::blobs, 300, 8, 4, 13);
  SensitivityConfig cfg;
  cfg.n_archs = 6;
  cfg.clean_points = 120;
  cfg.seed = 5;
  const SensitivityReport rep = sensitivity_analysis(data, {"rlf", "clf"}, cfg);
  REQUIRE(rep.attacks.size() == 2);
  for (std::size_t row = 0; row < rep.attacks.size(); ++row) {
    // kappa_ntk is metric 0, linear_regions metric 1: both label-free.
    for (std::size_t metric : {0, 1}) {
      CHECK(rep.cells[row][metric].mean_pct == 0.0);
      CHECK(rep.cells[row][metric].std_pct == 0.0);
    }
  }
}

TEST_CASE("sensitivity identity attack reports all-zero change") {
  const Dataset data = generate_synthetic(SyntheticKind::blobs, 200, 6, 3, 19);
  SensitivityConfig cfg;
  cfg.n_archs = 4;
  cfg.clean_points = 80;
  cfg.seed = 2;
  const SensitivityReport rep = sensitivity_analysis(data, {"identity"}, cfg);
  REQUIRE(rep.attacks.size() == 1);
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    CHECK(rep.cells[0][m].mean_pct == 0.0);
    CHECK(rep.cells[0][m].std_pct == 0.0);
  }
}

TEST_CASE("gaussian noise moves input-dependent metrics") {
  const Dataset data = generate_synthetic(SyntheticKind::blobs, 200, 6, 3, 21);
  SensitivityConfig cfg;
  cfg.n_archs = 4;
  cfg.clean_points = 80;
  cfg.seed = 3;
  const SensitivityReport rep = sensitivity_analysis(data, {"gaussian"}, cfg);
  bool any_nonzero = false;
  for (std::size_t m = 0; m < kMetricCount; ++m)
    any_nonzero = any_nonzero || rep.cells[0][m].mean_pct != 0.0;
  CHECK(any_nonzero);
}

TEST_CASE("sensitivity csv layout") {
  const Dataset data = generate_synthetic(SyntheticKind::blobs, 120, 4, 2, 23);
  SensitivityConfig cfg;
  cfg.n_archs = 2;
  cfg.clean_points = 60;
  const SensitivityReport rep = sensitivity_analysis(data, {"rlf"}, cfg);
  const std::string csv = sensitivity_csv(rep);
  CHECK(csv.find("attack") != std::string::npos);
  CHECK(csv.find("kappa_ntk") != std::string::npos);
  CHECK(csv.find("rlf") != std::string::npos);
  const std::string md = sensitivity_markdown(rep);
  CHECK(md.find("|") != std::string::npos);
}
