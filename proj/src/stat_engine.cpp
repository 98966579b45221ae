#include "nasaudit/stat_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "nasaudit/error.hpp"

namespace nasaudit {

double delta_imp(double condition_mean, double baseline_mean) {
  return condition_mean - baseline_mean;
}

namespace {

// Continued fraction for the incomplete beta (Lentz's method). Converges
// quickly when x < (a + 1) / (a + b + 2); the caller guarantees that.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw ContractError("incomplete_beta: continued fraction failed to converge");
}

double sample_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("incomplete_beta: a, b must be positive");
  if (x < 0.0 || x > 1.0) throw ContractError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;

  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_upper_tail(double t, double df) {
  if (!(df > 0.0)) throw ContractError("student_t_upper_tail: df must be positive");
  if (std::isinf(t)) return t > 0.0 ? 0.0 : 1.0;
  const double half = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? half : 1.0 - half;
}

TestOutcome welch_one_sided(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ContractError("welch_one_sided: each sample needs at least 2 values");

  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  const double va = sample_variance(a, ma);
  const double vb = sample_variance(b, mb);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  TestOutcome out;
  const double se2 = va / na + vb / nb;
  if (se2 <= 0.0) {
    // Degenerate at desk scale: both samples constant. Equal means fall back
    // to p = 0.5 by continuity; distinct means are decided by sign.
    out.degenerate = true;
    out.df = na + nb - 2.0;
    if (ma == mb) {
      out.t = 0.0;
      out.p = 0.5;
    } else {
      out.t = ma > mb ? std::numeric_limits<double>::infinity()
                      : -std::numeric_limits<double>::infinity();
      out.p = ma > mb ? 0.0 : 1.0;
    }
    return out;
  }

  out.t = (ma - mb) / std::sqrt(se2);
  const double da = (va / na) * (va / na) / (na - 1.0);
  const double db = (vb / nb) * (vb / nb) / (nb - 1.0);
  out.df = se2 * se2 / (da + db);
  out.p = student_t_upper_tail(out.t, out.df);
  return out;
}

std::vector<bool> bh_fdr(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) throw ContractError("bh_fdr: empty p-value list");
  const std::size_t m = p_values.size();

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

  double threshold = -1.0;
  for (std::size_t i = m; i > 0; --i) {
    const double p = p_values[order[i - 1]];
    if (p <= static_cast<double>(i) / static_cast<double>(m) * alpha) {
      threshold = p;
      break;
    }
  }

  std::vector<bool> rejected(m, false);
  if (threshold >= 0.0) {
    for (std::size_t i = 0; i < m; ++i) rejected[i] = p_values[i] <= threshold;
  }
  return rejected;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("summarize: empty sample");
  Summary s;
  s.n = values.size();
  s.mean = sample_mean(values);
  s.stddev = values.size() >= 2 ? std::sqrt(sample_variance(values, s.mean)) : 0.0;
  return s;
}

std::string format_summary(const Summary& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", s.mean, s.stddev);
  return buf;
}

}  // namespace nasaudit
