#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nasaudit/audit.hpp"
#include "nasaudit/dataset.hpp"
#include "nasaudit/error.hpp"
#include "nasaudit/manifest.hpp"
#include "nasaudit/nas_search.hpp"
#include "nasaudit/poison_forge.hpp"
#include "nasaudit/report.hpp"

namespace {

using namespace nasaudit;

struct Cli {
  std::string manifest_path;
  std::string out_root;
  std::size_t workers = 1;
  bool resume = false;
  std::uint64_t seed = 0;
  bool seed_given = false;

  std::string attack = "rlf";
  double budget = 0.5;
  std::string algorithm = "diff";
  std::string genotype;
  std::string output;
  std::string curve;
};

ExperimentManifest load(const Cli& cli) {
  if (cli.manifest_path.empty()) throw ConfigError("--manifest is required");
  return load_manifest(cli.manifest_path);
}

RunOptions options_of(const Cli& cli) {
  RunOptions opts;
  opts.out_root = cli.out_root;
  opts.workers = cli.workers;
  opts.resume = cli.resume;
  return opts;
}

std::uint64_t trial_seed(const Cli& cli, const ExperimentManifest& m) {
  return cli.seed_given ? cli.seed : m.seed_base;
}

void print_ledger(const RunLedger& ledger) {
  std::size_t failed = 0;
  for (const TrialRecord& r : ledger.trials) failed += r.failed ? 1 : 0;
  std::size_t significant = 0;
  for (const ConditionTest& t : ledger.tests) significant += t.outcome.rejected ? 1 : 0;
  std::cout << "run_dir: " << ledger.run_dir.string() << '\n'
            << "manifest: " << ledger.manifest_hash << '\n'
            << "trials: " << ledger.trials.size() << " (failed " << failed << ")\n"
            << "baseline: " << format_summary(Summary{ledger.baseline_mean, ledger.baseline_std, 0})
            << '\n'
            << "significant: " << significant << " of " << ledger.tests.size() << " tests\n";
}

int cmd_poison(const Cli& cli) {
  const ExperimentManifest m = load(cli);
  const SplitResult splits = split(realize_dataset(m.dataset), m.split);
  const std::uint64_t seed = trial_seed(cli, m);
  const std::filesystem::path out =
      cli.output.empty() ? std::filesystem::path("poisoned.csv") : std::filesystem::path(cli.output);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  const Dataset poisoned = craft_search_poison(m, splits.search_train, cli.attack, cli.budget,
                                               seed, out.has_parent_path() ? out.parent_path()
                                                                           : std::filesystem::path("."));
  PoisonSidecar sidecar;
  sidecar.attack = cli.attack;
  sidecar.p = cli.budget;
  sidecar.epsilon = m.attack_params.epsilon;
  sidecar.seed = seed;
  for (std::size_t i = 0; i < poisoned.n(); ++i)
    if (poisoned.poison_mask[i]) sidecar.mask_indices.push_back(i);
  export_poisoned(poisoned, sidecar, out);
  std::cout << "wrote " << out.string() << " (" << sidecar.mask_indices.size() << " of "
            << poisoned.n() << " rows poisoned)\n";
  return 0;
}

SearchResult dispatch(const ExperimentManifest& m, const std::string& algorithm,
                      const Dataset& train, const Dataset& val, std::uint64_t seed) {
  if (algorithm == "diff") {
    DiffSearchConfig cfg = m.diff;
    cfg.seed = seed;
    return diff_search(train, val, cfg);
  }
  if (algorithm == "tf") {
    TfSearchConfig cfg = m.tf;
    cfg.seed = seed;
    return tf_search(train, cfg);
  }
  if (algorithm == "hybrid") {
    HybridSearchConfig cfg = m.hybrid;
    cfg.seed = seed;
    return hybrid_search(train, val, cfg);
  }
  throw ConfigError("unknown algorithm: " + algorithm);
}

int cmd_search(const Cli& cli) {
  const ExperimentManifest m = load(cli);
  const SplitResult splits = split(realize_dataset(m.dataset), m.split);
  const std::uint64_t seed = trial_seed(cli, m);
  const std::filesystem::path adhoc = std::filesystem::path(cli.out_root) / "adhoc";
  Dataset train = craft_search_poison(m, splits.search_train, cli.attack, cli.budget, seed, adhoc);
  Dataset val =
      craft_search_poison(m, splits.search_val, cli.attack, cli.budget, seed, adhoc, "val");
  const SearchResult result = dispatch(m, cli.algorithm, train, val, seed);
  const std::string json = search_result_json(result);
  if (cli.output.empty()) {
    std::cout << json << '\n';
  } else {
    std::ofstream out(cli.output, std::ios::binary);
    out << json << '\n';
    std::cout << "wrote " << cli.output << '\n';
  }
  if (!cli.curve.empty()) {
    std::ofstream out(cli.curve, std::ios::binary);
    out << loss_curve_csv(result);
    std::cout << "wrote " << cli.curve << '\n';
  }
  return result.failed ? 1 : 0;
}

int cmd_retrain(const Cli& cli) {
  const ExperimentManifest m = load(cli);
  const SplitResult splits = split(realize_dataset(m.dataset), m.split);
  std::string text = cli.genotype;
  if (std::filesystem::exists(cli.genotype)) {
    std::ifstream in(cli.genotype, std::ios::binary);
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const Genotype g = parse_genotype(text);
  const double acc =
      retrain_from_scratch(g, splits.final_train, splits.test, m.retrain, trial_seed(cli, m));
  std::printf("test_accuracy: %.2f\n", acc);
  return 0;
}

int cmd_audit(const Cli& cli) {
  print_ledger(run_audit(load(cli), options_of(cli)));
  return 0;
}

int cmd_ood(const Cli& cli) {
  print_ledger(run_ood(load(cli), options_of(cli)));
  return 0;
}

int cmd_defend(const Cli& cli) {
  print_ledger(run_defense(load(cli), options_of(cli)));
  return 0;
}

int cmd_sensitivity(const Cli& cli) {
  const std::filesystem::path dir = run_sensitivity_files(load(cli), options_of(cli));
  std::cout << "run_dir: " << dir.string() << '\n';
  return 0;
}

int cmd_report(const Cli& cli) {
  Cli with_resume = cli;
  with_resume.resume = true;
  print_ledger(rebuild_ledger(load(cli), options_of(with_resume)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisoning audit for architecture search"};
  app.require_subcommand(1);

  Cli cli;
  const char* env_out = std::getenv("NASAUDIT_OUT");
  cli.out_root = env_out != nullptr ? env_out : "runs";

  app.add_option("--manifest", cli.manifest_path, "Experiment manifest (JSON)");
  app.add_option("--out", cli.out_root, "Output root (default $NASAUDIT_OUT or ./runs)");
  app.add_option("--workers", cli.workers, "Worker threads for trial execution");
  app.add_flag("--resume", cli.resume, "Reuse journaled trials from a previous run");
  app.add_option("--seed", cli.seed, "Trial seed for one-off commands")
      ->each([&cli](const std::string&) { cli.seed_given = true; });

  CLI::App* poison = app.add_subcommand("poison", "Craft a poisoned search-train split");
  poison->add_option("--attack", cli.attack, "clean | rlf | clf | gaussian | gc");
  poison->add_option("--budget", cli.budget, "Poisoned fraction in (0,1]");
  poison->add_option("--output", cli.output, "Output CSV path");

  CLI::App* search = app.add_subcommand("search", "Run one architecture search");
  search->add_option("--algo", cli.algorithm, "diff | tf | hybrid");
  search->add_option("--attack", cli.attack, "Optional attack on the search split")
      ->default_val("clean");
  search->add_option("--budget", cli.budget, "Poisoned fraction in (0,1]");
  search->add_option("--output", cli.output, "Write the result JSON here instead of stdout");
  search->add_option("--curve", cli.curve, "Write the stage loss curve CSV here");

  CLI::App* retrain = app.add_subcommand("retrain", "Retrain a genotype from scratch");
  retrain->add_option("--genotype", cli.genotype, "Genotype text or path to a file")->required();

  CLI::App* audit_cmd = app.add_subcommand("audit", "Run the full poisoning matrix");
  CLI::App* ood_cmd =
      app.add_subcommand("ood", "Search on the OOD source, evaluate on the primary task");
  CLI::App* defend_cmd = app.add_subcommand("defend", "Run attack x defense conditions");
  CLI::App* sens_cmd = app.add_subcommand("sensitivity", "Emit the metric sensitivity table");
  CLI::App* report_cmd =
      app.add_subcommand("report", "Re-render reports from the persisted journal");

  // Global flags are accepted after the subcommand too.
  for (CLI::App* sub : {poison, search, retrain, audit_cmd, ood_cmd, defend_cmd, sens_cmd,
                        report_cmd})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("poison")) return cmd_poison(cli);
    if (app.got_subcommand("search")) return cmd_search(cli);
    if (app.got_subcommand("retrain")) return cmd_retrain(cli);
    if (app.got_subcommand("audit")) return cmd_audit(cli);
    if (app.got_subcommand("ood")) return cmd_ood(cli);
    if (app.got_subcommand("defend")) return cmd_defend(cli);
    if (app.got_subcommand("sensitivity")) return cmd_sensitivity(cli);
    if (app.got_subcommand("report")) return cmd_report(cli);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
