#include "nasaudit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "nasaudit/search_space.hpp"
#include "nasaudit/stat_engine.hpp"

namespace nasaudit {

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

std::vector<double> accuracies_of(const RunLedger& ledger, const std::string& condition) {
  std::vector<double> out;
  for (const TrialRecord& r : ledger.trials) {
    if (r.condition == condition && !r.failed) out.push_back(r.accuracy);
  }
  return out;
}

const ConditionTest* find_test(const RunLedger& ledger, const std::string& algorithm,
                               const std::string& attack, double budget) {
  for (const ConditionTest& t : ledger.tests) {
    if (t.algorithm == algorithm && t.attack == attack && t.budget == budget) return &t;
  }
  return nullptr;
}

// "97.32 ± 0.07 / 0.58", bolded and underlined when the Welch test survived
// BH. "--" marks a missing condition.
std::string table_cell(const RunLedger& ledger, const std::string& algorithm,
                       const std::string& attack, double budget, const std::string& defense) {
  const std::vector<double> accs =
      accuracies_of(ledger, condition_tag(algorithm, attack, budget, defense));
  if (accs.empty()) return "--";
  const Summary s = summarize(accs);
  std::string text = format_summary(s) + " / " + f2(delta_imp(s.mean, ledger.baseline_mean));
  const ConditionTest* t = defense.empty() ? find_test(ledger, algorithm, attack, budget) : nullptr;
  if (t != nullptr && t->outcome.rejected) text = "**<u>" + text + "</u>**";
  return text;
}

std::string attack_row_label(const std::string& attack, double budget) {
  if (attack == "clean") return "clean";
  if (attack == "ood") return "ood";
  return attack + " p=" + std::to_string(static_cast<long>(std::lround(budget * 100.0))) + "%";
}

}  // namespace

std::string trials_csv(const RunLedger& ledger) {
  std::ostringstream out;
  out << "condition,algorithm,attack,budget,defense,seed_index,seed,failed,accuracy,delta_imp,"
         "genotype,failure_reason\n";
  for (const TrialRecord& r : ledger.trials) {
    out << r.condition << ',' << r.algorithm << ',' << r.attack << ',' << g17(r.budget) << ','
        << r.defense << ',' << r.seed_index << ',' << r.seed << ',' << (r.failed ? 1 : 0) << ',';
    if (r.failed) {
      out << ",,";
      out << ',' << csv_quote(r.failure_reason);
    } else {
      out << g17(r.accuracy) << ',' << g17(r.delta_imp) << ',' << csv_quote(r.genotype) << ',';
    }
    out << '\n';
  }
  return out.str();
}

std::string tests_csv(const RunLedger& ledger) {
  std::ostringstream out;
  out << "algorithm,attack,budget,n_clean,n_poisoned,t,df,p,bh_rejected,degenerate\n";
  for (const ConditionTest& t : ledger.tests) {
    out << t.algorithm << ',' << t.attack << ',' << g17(t.budget) << ',' << t.n_clean << ','
        << t.n_poisoned << ',' << g17(t.outcome.t) << ',' << g17(t.outcome.df) << ','
        << g17(t.outcome.p) << ',' << (t.outcome.rejected ? 1 : 0) << ','
        << (t.outcome.degenerate ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string accuracy_table_markdown(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  out << "# Search accuracy under poisoning\n\n";
  out << "Cells: test accuracy mean ± std over seeds / dImp vs the random baseline.\n";
  out << "Bold underlined cells reject the no-degradation null (one-sided Welch, BH at 0.05).\n\n";
  out << "Random baseline: " << f2(ledger.baseline_mean) << " ± " << f2(ledger.baseline_std)
      << "\n\n";
  out << "| condition |";
  for (const std::string& a : m.algorithms) out << ' ' << a << " |";
  out << "\n| --- |";
  for (std::size_t i = 0; i < m.algorithms.size(); ++i) out << " --- |";
  out << '\n';

  out << "| clean |";
  for (const std::string& a : m.algorithms) out << ' ' << table_cell(ledger, a, "clean", 0.0, "") << " |";
  out << '\n';
  for (const std::string& attack : m.attacks) {
    for (const double budget : m.budgets) {
      out << "| " << attack_row_label(attack, budget) << " |";
      for (const std::string& a : m.algorithms)
        out << ' ' << table_cell(ledger, a, attack, budget, "") << " |";
      out << '\n';
    }
  }
  return out.str();
}

std::string accuracy_table_csv(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  out << "algorithm,attack,budget,n,mean,std,delta_imp,p,bh_rejected\n";
  auto row = [&](const std::string& algo, const std::string& attack, double budget) {
    const std::vector<double> accs = accuracies_of(ledger, condition_tag(algo, attack, budget));
    if (accs.empty()) return;
    const Summary s = summarize(accs);
    const ConditionTest* t = find_test(ledger, algo, attack, budget);
    out << algo << ',' << attack << ',' << g17(budget) << ',' << s.n << ',' << g17(s.mean) << ','
        << g17(s.stddev) << ',' << g17(delta_imp(s.mean, ledger.baseline_mean)) << ','
        << (t ? g17(t->outcome.p) : "") << ',' << (t && t->outcome.rejected ? 1 : 0) << '\n';
  };
  for (const std::string& algo : m.algorithms) {
    row(algo, "clean", 0.0);
    for (const std::string& attack : m.attacks) {
      for (const double budget : m.budgets) row(algo, attack, budget);
    }
  }
  return out.str();
}

std::string ood_table_markdown(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  const std::string source_kind = m.search_dataset ? m.search_dataset->kind : m.dataset.kind;
  out << "# In-domain vs out-of-domain search\n\n";
  out << "Architectures searched on " << source_kind << " data, retrained and tested on "
      << m.dataset.kind << ". Bold underlined cells reject the no-degradation null.\n\n";
  out << "Random baseline: " << f2(ledger.baseline_mean) << " ± " << f2(ledger.baseline_std)
      << "\n\n";
  out << "| search data |";
  for (const std::string& a : m.algorithms) out << ' ' << a << " |";
  out << "\n| --- |";
  for (std::size_t i = 0; i < m.algorithms.size(); ++i) out << " --- |";
  out << '\n';
  out << "| in-domain (" << m.dataset.kind << ") |";
  for (const std::string& a : m.algorithms) out << ' ' << table_cell(ledger, a, "clean", 0.0, "") << " |";
  out << '\n';
  out << "| ood (" << source_kind << ") |";
  for (const std::string& a : m.algorithms) out << ' ' << table_cell(ledger, a, "ood", 0.0, "") << " |";
  out << '\n';
  return out.str();
}

std::string ood_table_csv(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  out << "algorithm,search_data,n,mean,std,delta_imp,p,bh_rejected\n";
  for (const std::string& algo : m.algorithms) {
    for (const std::string& attack : {std::string("clean"), std::string("ood")}) {
      const std::vector<double> accs = accuracies_of(ledger, condition_tag(algo, attack, 0.0));
      if (accs.empty()) continue;
      const Summary s = summarize(accs);
      const ConditionTest* t = attack == "ood" ? find_test(ledger, algo, "ood", 0.0) : nullptr;
      out << algo << ',' << (attack == "clean" ? "in_domain" : "ood") << ',' << s.n << ','
          << g17(s.mean) << ',' << g17(s.stddev) << ','
          << g17(delta_imp(s.mean, ledger.baseline_mean)) << ','
          << (t ? g17(t->outcome.p) : "") << ',' << (t && t->outcome.rejected ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::string defense_table_markdown(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  out << "# Accuracy after defense\n\n";
  out << "Search data is attacked, then defended, then searched; retraining stays clean.\n\n";
  out << "| defense | condition |";
  for (const std::string& a : m.algorithms) out << ' ' << a << " |";
  out << "\n| --- | --- |";
  for (std::size_t i = 0; i < m.algorithms.size(); ++i) out << " --- |";
  out << '\n';
  for (const std::string& defense : m.defenses) {
    for (const std::string& attack : m.attacks) {
      for (const double budget : m.budgets) {
        bool any = false;
        for (const std::string& a : m.algorithms) {
          if (!accuracies_of(ledger, condition_tag(a, attack, budget, defense)).empty())
            any = true;
        }
        if (!any) continue;
        out << "| " << defense << " | " << attack_row_label(attack, budget) << " |";
        for (const std::string& a : m.algorithms)
          out << ' ' << table_cell(ledger, a, attack, budget, defense) << " |";
        out << '\n';
      }
    }
  }
  return out.str();
}

std::string defense_table_csv(const RunLedger& ledger, const ExperimentManifest& m) {
  std::ostringstream out;
  out << "defense,algorithm,attack,budget,n,mean,std,delta_imp\n";
  for (const std::string& defense : m.defenses) {
    for (const std::string& algo : m.algorithms) {
      for (const std::string& attack : m.attacks) {
        for (const double budget : m.budgets) {
          const std::vector<double> accs =
              accuracies_of(ledger, condition_tag(algo, attack, budget, defense));
          if (accs.empty()) continue;
          const Summary s = summarize(accs);
          out << defense << ',' << algo << ',' << attack << ',' << g17(budget) << ',' << s.n
              << ',' << g17(s.mean) << ',' << g17(s.stddev) << ','
              << g17(delta_imp(s.mean, ledger.baseline_mean)) << '\n';
        }
      }
    }
  }
  return out.str();
}

std::string delta_imp_svg(const RunLedger& ledger, const ExperimentManifest& m) {
  struct Bar {
    std::string label;
    std::string algorithm;
    double value;
  };
  std::vector<Bar> bars;
  auto add = [&](const std::string& algo, const std::string& attack, double budget) {
    const std::vector<double> accs = accuracies_of(ledger, condition_tag(algo, attack, budget));
    if (accs.empty()) return;
    bars.push_back(Bar{attack_row_label(attack, budget), algo,
                       delta_imp(summarize(accs).mean, ledger.baseline_mean)});
  };
  std::vector<std::string> labels;
  {
    bool any_ood = false;
    for (const TrialRecord& r : ledger.trials) any_ood = any_ood || r.attack == "ood";
    for (const std::string& algo : m.algorithms) {
      add(algo, "clean", 0.0);
      if (any_ood) add(algo, "ood", 0.0);
      for (const std::string& attack : m.attacks) {
        for (const double budget : m.budgets) add(algo, attack, budget);
      }
    }
    for (const Bar& b : bars) {
      if (std::find(labels.begin(), labels.end(), b.label) == labels.end())
        labels.push_back(b.label);
    }
  }

  static const char* kColors[] = {"#4e79a7", "#f28e2b", "#59a14c"};
  const double left = 70.0, top = 30.0, plot_w = 760.0, plot_h = 300.0;
  const double width = left + plot_w + 30.0, height = top + plot_h + 90.0;

  double lo = 0.0, hi = 0.0;
  for (const Bar& b : bars) {
    lo = std::min(lo, b.value);
    hi = std::max(hi, b.value);
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double pad = 0.1 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto y_of = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(width) << "\" height=\""
      << f2(height) << "\" viewBox=\"0 0 " << f2(width) << ' ' << f2(height) << "\">\n";
  out << "  <title>dImp by condition</title>\n";
  out << "  <line x1=\"" << f2(left) << "\" y1=\"" << f2(y_of(0.0)) << "\" x2=\""
      << f2(left + plot_w) << "\" y2=\"" << f2(y_of(0.0))
      << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  out << "  <text x=\"12\" y=\"" << f2(top + plot_h / 2.0)
      << "\" font-size=\"12\" transform=\"rotate(-90 12 " << f2(top + plot_h / 2.0)
      << ")\" text-anchor=\"middle\">dImp (points)</text>\n";

  const std::size_t groups = labels.size();
  const std::size_t per_group = m.algorithms.size();
  if (groups > 0 && per_group > 0) {
    const double group_w = plot_w / static_cast<double>(groups);
    const double bar_w = std::min(24.0, group_w / static_cast<double>(per_group + 1));
    for (const Bar& b : bars) {
      const auto gi = static_cast<double>(
          std::find(labels.begin(), labels.end(), b.label) - labels.begin());
      double ai = 0.0;
      for (std::size_t i = 0; i < m.algorithms.size(); ++i)
        if (m.algorithms[i] == b.algorithm) ai = static_cast<double>(i);
      const double x = left + gi * group_w +
                       (group_w - bar_w * static_cast<double>(per_group)) / 2.0 + ai * bar_w;
      const double y0 = y_of(std::max(0.0, b.value));
      const double h = std::fabs(y_of(b.value) - y_of(0.0));
      const char* color = kColors[static_cast<std::size_t>(ai) % 3];
      out << "  <rect x=\"" << f2(x) << "\" y=\"" << f2(y0) << "\" width=\"" << f2(bar_w - 2.0)
          << "\" height=\"" << f2(std::max(h, 0.5)) << "\" fill=\"" << color << "\"/>\n";
    }
    for (std::size_t g = 0; g < groups; ++g) {
      const double x = left + (static_cast<double>(g) + 0.5) * group_w;
      out << "  <text x=\"" << f2(x) << "\" y=\"" << f2(top + plot_h + 16.0)
          << "\" font-size=\"10\" text-anchor=\"end\" transform=\"rotate(-35 " << f2(x) << ' '
          << f2(top + plot_h + 16.0) << ")\">" << labels[g] << "</text>\n";
    }
    for (std::size_t i = 0; i < m.algorithms.size(); ++i) {
      const double x = left + static_cast<double>(i) * 130.0;
      out << "  <rect x=\"" << f2(x) << "\" y=\"" << f2(height - 22.0)
          << "\" width=\"12\" height=\"12\" fill=\"" << kColors[i % 3] << "\"/>\n";
      out << "  <text x=\"" << f2(x + 16.0) << "\" y=\"" << f2(height - 12.0)
          << "\" font-size=\"12\">" << m.algorithms[i] << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void write_reports(const RunLedger& ledger, const ExperimentManifest& m) {
  const auto& dir = ledger.run_dir;
  auto write = [&](const std::filesystem::path& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
  };
  write("trials.csv", trials_csv(ledger));
  write("tests.csv", tests_csv(ledger));

  bool any_audit = false, any_ood = false, any_defense = false;
  for (const TrialRecord& r : ledger.trials) {
    if (r.condition == "baseline") continue;
    if (!r.defense.empty()) any_defense = true;
    else if (r.attack == "ood") any_ood = true;
    else any_audit = true;
  }
  if (any_audit) {
    write("table1.md", accuracy_table_markdown(ledger, m));
    write("table1.csv", accuracy_table_csv(ledger, m));
    write("delta_imp.svg", delta_imp_svg(ledger, m));
  }
  if (any_ood) {
    write("table4.md", ood_table_markdown(ledger, m));
    write("table4.csv", ood_table_csv(ledger, m));
  }
  if (any_defense) {
    write("defense.md", defense_table_markdown(ledger, m));
    write("defense.csv", defense_table_csv(ledger, m));
  }

  // Figure-2-style pair: strongest clean genotype vs weakest poisoned one.
  const TrialRecord* best_clean = nullptr;
  const TrialRecord* worst_poisoned = nullptr;
  for (const TrialRecord& r : ledger.trials) {
    if (r.failed || r.condition == "baseline" || !r.defense.empty()) continue;
    if (r.attack == "clean") {
      if (best_clean == nullptr || r.accuracy > best_clean->accuracy) best_clean = &r;
    } else if (r.attack != "ood") {
      if (worst_poisoned == nullptr || r.accuracy < worst_poisoned->accuracy)
        worst_poisoned = &r;
    }
  }
  if (best_clean != nullptr)
    write("clean_best.dot", genotype_dot(parse_genotype(best_clean->genotype), "clean_best"));
  if (worst_poisoned != nullptr)
    write("poisoned_worst.dot",
          genotype_dot(parse_genotype(worst_poisoned->genotype), "poisoned_worst"));
}

}  // namespace nasaudit
