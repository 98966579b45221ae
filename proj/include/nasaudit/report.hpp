#pragma once

#include <string>

#include "nasaudit/audit.hpp"

namespace nasaudit {

// Canonical per-trial ledger; excludes wall times so reruns are byte-equal.
std::string trials_csv(const RunLedger& ledger);

std::string tests_csv(const RunLedger& ledger);

// Accuracy table: rows clean + attack x budget, one column per algorithm,
// cells "mean ± std / dImp"; significant cells bolded and underlined.
std::string accuracy_table_markdown(const RunLedger& ledger, const ExperimentManifest& m);
std::string accuracy_table_csv(const RunLedger& ledger, const ExperimentManifest& m);

// In-domain vs out-of-domain search comparison.
std::string ood_table_markdown(const RunLedger& ledger, const ExperimentManifest& m);
std::string ood_table_csv(const RunLedger& ledger, const ExperimentManifest& m);

// Defended conditions per (defense, attack, budget).
std::string defense_table_markdown(const RunLedger& ledger, const ExperimentManifest& m);
std::string defense_table_csv(const RunLedger& ledger, const ExperimentManifest& m);

// Grouped bar chart of per-condition mean dImp.
std::string delta_imp_svg(const RunLedger& ledger, const ExperimentManifest& m);

// Everything above plus DOT exports of the best clean and worst poisoned
// genotypes, written under ledger.run_dir.
void write_reports(const RunLedger& ledger, const ExperimentManifest& m);

}  // namespace nasaudit
