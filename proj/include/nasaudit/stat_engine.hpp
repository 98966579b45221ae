#pragma once

#include <string>
#include <vector>

namespace nasaudit {

struct AccuracySample {
  std::vector<double> values;  // percent
  std::string condition;
};

struct TestOutcome {
  double t = 0.0;
  double df = 1.0;  // Welch-Satterthwaite
  double p = 0.5;   // one-sided, P(T_df > t)
  bool rejected = false;
  bool degenerate = false;  // zero-variance convention applied
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n-1); 0 for a single value
  std::size_t n = 0;
};

// Percentage-point gain of a searched architecture over the random baseline.
double delta_imp(double condition_mean, double baseline_mean);

// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

// Upper-tail t CDF: P(T_df > t).
double student_t_upper_tail(double t, double df);

// One-sided Welch test of mean(a) > mean(b); small p favours the alternative.
TestOutcome welch_one_sided(const std::vector<double>& a, const std::vector<double>& b);

// Benjamini-Hochberg step-up; flags returned in the input order.
std::vector<bool> bh_fdr(const std::vector<double>& p_values, double alpha = 0.05);

Summary summarize(const std::vector<double>& values);

// "97.32 ± 0.07" with two decimals, matching report table cells.
std::string format_summary(const Summary& s);

}  // namespace nasaudit
