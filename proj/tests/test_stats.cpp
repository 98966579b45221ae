#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "nasaudit/rng.hpp"
#include "nasaudit/stat_engine.hpp"

using namespace nasaudit;

namespace {

// Marsaglia-Tsang gamma(shape, 1) sampler; shape < 1 boosted via U^(1/shape).
double gamma_draw(double shape, Rng& rng) {
  if (shape < 1.0) {
    const double u = std::max(rng.uniform(), 1e-300);
    return gamma_draw(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// Monte-Carlo Student-t upper tail from the defining ratio
// T = Z / sqrt(V/df), Z ~ N(0,1), V ~ chi^2_df (gamma(df/2, 2)).
double mc_t_tail(double t, double df, std::size_t draws, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t above = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double z = rng.normal();
    const double v = 2.0 * gamma_draw(df / 2.0, rng);
    if (z / std::sqrt(v / df) > t) ++above;
  }
  return static_cast<double>(above) / static_cast<double>(draws);
}

// Direct statement of the BH step-up rule, kept deliberately naive.
std::vector<bool> oracle_bh(const std::vector<double>& p, double alpha) {
  const std::size_t m = p.size();
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  double threshold = -1.0;
  for (std::size_t i = m; i >= 1; --i) {
    if (sorted[i - 1] <= static_cast<double>(i) / static_cast<double>(m) * alpha) {
      threshold = sorted[i - 1];
      break;
    }
  }
  std::vector<bool> out(m, false);
  for (std::size_t i = 0; i < m; ++i) out[i] = threshold >= 0.0 && p[i] <= threshold;
  return out;
}

}  // namespace

TEST_CASE("delta_imp is a plain difference in points") {
  CHECK(delta_imp(97.32, 96.73) == doctest::Approx(0.59).epsilon(1e-12));
  CHECK(delta_imp(50.0, 50.0) == 0.0);
  CHECK(delta_imp(96.77, 96.73) == doctest::Approx(0.04).epsilon(1e-9));
}

TEST_CASE("incomplete beta basics") {
  CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // I_x(1,1) = x; I_x(2,2) = x^2(3-2x).
  CHECK(incomplete_beta(1.0, 1.0, 0.37) == doctest::Approx(0.37).epsilon(1e-10));
  CHECK(incomplete_beta(2.0, 2.0, 0.3) == doctest::Approx(0.09 * (3 - 0.6)).epsilon(1e-10));
  // Symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
  CHECK(incomplete_beta(2.5, 4.0, 0.42) ==
        doctest::Approx(1.0 - incomplete_beta(4.0, 2.5, 0.58)).epsilon(1e-10));
}

TEST_CASE("student t tail: analytic df=1 and df=2 forms") {
  // df=1 (Cauchy): P(T > t) = 1/2 - atan(t)/pi.
  for (double t : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
    CHECK(student_t_upper_tail(t, 1.0) ==
          doctest::Approx(0.5 - std::atan(t) / M_PI).epsilon(1e-8));
    // df=2: P(T > t) = 1/2 - t / (2 sqrt(2 + t^2)).
    CHECK(student_t_upper_tail(t, 2.0) ==
          doctest::Approx(0.5 - t / (2.0 * std::sqrt(2.0 + t * t))).epsilon(1e-8));
  }
  CHECK(student_t_upper_tail(0.0, 17.3) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("welch: identical samples give t=0, p=0.5") {
  const std::vector<double> a = {1.0, 2.0, 3.0};
  const TestOutcome r = welch_one_sided(a, a);
  CHECK(r.t == 0.0);
  CHECK(r.p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("welch: direction sanity and degenerate flag") {
  const std::vector<double> lo = {1.0, 2.0, 3.0};
  const std::vector<double> hi = {11.0, 12.0, 13.0};
  CHECK(welch_one_sided(lo, hi).p > 0.999);  // testing lo > hi: hopeless
  CHECK(welch_one_sided(hi, lo).p < 0.001);

  const std::vector<double> c1 = {5.0, 5.0, 5.0};
  const TestOutcome deg = welch_one_sided(c1, c1);
  CHECK(deg.degenerate);
  CHECK(deg.p == doctest::Approx(0.5));

  CHECK_THROWS(welch_one_sided({1.0}, {1.0, 2.0}));
}

TEST_CASE("welch: location and scale invariance") {
  const std::vector<double> a = {97.4, 97.3, 97.2, 97.8};
  const std::vector<double> b = {96.8, 96.7, 96.9};
  const TestOutcome base = welch_one_sided(a, b);

  auto shift = [](std::vector<double> v, double c) {
    for (double& x : v) x += c;
    return v;
  };
  const TestOutcome shifted = welch_one_sided(shift(a, 123.5), shift(b, 123.5));
  CHECK(shifted.t == doctest::Approx(base.t).epsilon(1e-9));
  CHECK(shifted.p == doctest::Approx(base.p).epsilon(1e-9));

  // Common positive rescaling of deviations around the two means.
  auto rescale = [](const std::vector<double>& v, double k) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    std::vector<double> out;
    for (double x : v) out.push_back(m + k * (x - m));
    return out;
  };
  // Scaling deviations scales both the mean difference's standard error and
  // the sample stds identically only if means are also scaled; instead check
  // the documented property: scale everything about a common origin.
  auto scale_all = [](std::vector<double> v, double k) {
    for (double& x : v) x *= k;
    return v;
  };
  const TestOutcome scaled = welch_one_sided(scale_all(a, 3.0), scale_all(b, 3.0));
  CHECK(scaled.t == doctest::Approx(base.t).epsilon(1e-9));
  CHECK(scaled.p == doctest::Approx(base.p).epsilon(1e-9));
  (void)rescale;
}

TEST_CASE("welch p matches the million-draw Monte-Carlo oracle on 20 fixtures") {
  // Fixture 0 is the hand-pinned pair; the rest are random small samples.
  std::vector<std::pair<std::vector<double>, std::vector<double>>> fixtures;
  fixtures.push_back({{97.4, 97.3, 97.2}, {96.8, 96.7, 96.9}});
  Rng rng(2026);
  while (fixtures.size() < 20) {
    const std::size_t na = 3 + rng.bounded(8);
    const std::size_t nb = 3 + rng.bounded(8);
    std::vector<double> a, b;
    const double mu_a = 50.0 + 10.0 * rng.normal();
    const double mu_b = mu_a - 3.0 * rng.uniform();
    const double sd_a = 0.5 + 2.0 * rng.uniform();
    const double sd_b = 0.5 + 2.0 * rng.uniform();
    for (std::size_t i = 0; i < na; ++i) a.push_back(mu_a + sd_a * rng.normal());
    for (std::size_t i = 0; i < nb; ++i) b.push_back(mu_b + sd_b * rng.normal());
    fixtures.push_back({a, b});
  }
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const TestOutcome r = welch_one_sided(fixtures[i].first, fixtures[i].second);
    const double mc = mc_t_tail(r.t, r.df, 1000000, 555 + i);
    CHECK(std::abs(r.p - mc) < 2e-3);
  }
}

TEST_CASE("welch pinned fixture values") {
  // a = {97.4, 97.3, 97.2}, b = {96.8, 96.7, 96.9}: both variances 0.01,
  // t = 0.5 / sqrt(0.02/3) = 6.1237, df = 4.
  const TestOutcome r = welch_one_sided({97.4, 97.3, 97.2}, {96.8, 96.7, 96.9});
  CHECK(r.t == doctest::Approx(6.12372).epsilon(1e-4));
  CHECK(r.df == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(r.p == doctest::Approx(0.00179).epsilon(0.02));
}

TEST_CASE("bh_fdr matches the direct step-up rule on 25 random vectors") {
  Rng rng(31337);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.bounded(12);
    std::vector<double> p;
    for (std::size_t i = 0; i < m; ++i) {
      // Mix of tiny, moderate, and near-1 p-values plus exact ties.
      switch (rng.bounded(4)) {
        case 0: p.push_back(0.001 * (1 + rng.bounded(50))); break;
        case 1: p.push_back(0.01 * (1 + rng.bounded(10))); break;
        case 2: p.push_back(rng.uniform()); break;
        default: p.push_back(0.05); break;
      }
    }
    CHECK(bh_fdr(p, 0.05) == oracle_bh(p, 0.05));
  }
}

TEST_CASE("bh_fdr pinned examples") {
  CHECK(bh_fdr({0.01, 0.02, 0.03, 0.04, 0.05}, 0.05) ==
        std::vector<bool>{true, true, true, true, true});
  CHECK(bh_fdr({1.0, 1.0, 1.0}, 0.05) == std::vector<bool>{false, false, false});
  CHECK(bh_fdr({0.04}, 0.05) == std::vector<bool>{true});
  // Step-up: a large early p is rescued by a significant later one.
  CHECK(bh_fdr({0.001, 0.2, 0.02, 0.9}, 0.05) == std::vector<bool>{true, false, true, false});
}

TEST_CASE("bh_fdr monotone: lowering a p never shrinks the rejection set") {
  Rng rng(777);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.bounded(8);
    std::vector<double> p;
    for (std::size_t i = 0; i < m; ++i) p.push_back(rng.uniform());
    const std::vector<bool> before = bh_fdr(p, 0.05);
    std::vector<double> lowered = p;
    const std::size_t k = rng.bounded(m);
    lowered[k] *= rng.uniform();
    const std::vector<bool> after = bh_fdr(lowered, 0.05);
    for (std::size_t i = 0; i < m; ++i)
      if (before[i]) CHECK(after[i]);
  }
}

TEST_CASE("summarize mean and sample std") {
  const Summary s1 = summarize({1.0, 1.0, 1.0});
  CHECK(s1.mean == 1.0);
  CHECK(s1.stddev == 0.0);
  CHECK(format_summary(s1) == "1.00 ± 0.00");

  const Summary s2 = summarize({0.0, 2.0});
  CHECK(s2.mean == 1.0);
  CHECK(s2.stddev == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(format_summary(s2) == "1.00 ± 1.41");

  const Summary s3 = summarize({97.321});
  CHECK(s3.n == 1);
  CHECK(s3.stddev == 0.0);
}
