// scml: command-line front end for the sparse compositional metric library.
//
//   scml run   -c cfg.json [--seed 7] [--mode local] [--out dir/]
//   scml sweep -c cfg.json --budgets 50,100,200,400 [--local] [--out dir/]
//   scml basis -i data.csv [--format csv] [--budget K] [--regions m] [--seed s] -o basis.json
//   scml eval  --model model.json --train train.csv --test test.csv [--task t]
//   scml bound --gamma g --radius R --kstar K --beta b --loss-bound U --cover N --n n --delta d

#include "scml/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using scml::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) scml::detail::fail("cannot open '", path, "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    scml::detail::fail(path, ": ", e.what());
  }
}

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::optional<int> threads;
};

// Flags override top-level config fields before parsing.
scml::ExperimentConfig load_with_overrides(const RunOptions& o) {
  json j = read_json(o.config);
  if (o.seed) j["seeds"] = std::vector<std::uint64_t>{*o.seed};
  if (o.mode) j["mode"] = *o.mode;
  if (o.threads) j["threads"] = *o.threads;
  const auto base = std::filesystem::path(o.config).parent_path();
  auto cfg = scml::experiment_config_from_json(j, base);
  if (o.out) cfg.output_dir = *o.out;
  return cfg;
}

void add_run_flags(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("-c,--config", o.config, "experiment config JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  cmd->add_option("--mode", o.mode, "global | multitask | local | euclidean-baseline");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "seeds evaluated concurrently");
}

int cmd_run(const RunOptions& o) {
  const auto cfg = load_with_overrides(o);
  const auto rep = scml::run_experiment(cfg, true);
  std::cout << std::setprecision(17);
  for (const auto& [name, stat] : rep.report.at("summary").items())
    std::cout << name << " mean=" << stat.at("mean").get<double>() << " stderr=" << stat.at("stderr").get<double>()
              << " n=" << stat.at("count").get<std::size_t>() << '\n';
  for (const auto& s : rep.seeds)
    if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.reason << '\n';
  std::cout << "report: " << (std::filesystem::path(cfg.output_dir) / "report.json").string() << '\n';
  return 0;
}

int cmd_sweep(const RunOptions& o, std::vector<scml::Index> budgets, bool with_local) {
  const auto cfg = load_with_overrides(o);
  std::sort(budgets.begin(), budgets.end());
  const auto rows = scml::basis_sweep(cfg, budgets, with_local);
  const auto summary = scml::sweep_summary(rows);
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  scml::detail::write_file(dir / "sweep.csv", scml::sweep_csv(rows));
  scml::detail::write_file(dir / "sweep.json",
                           json{{"config", scml::config_echo(cfg)}, {"budgets", budgets}, {"summary", summary}}.dump(2) +
                               "\n");
  std::cout << std::setprecision(17);
  for (const auto& r : summary)
    std::cout << r.at("mode").get<std::string>() << " K=" << r.at("K").get<scml::Index>()
              << " selected=" << r.at("selected").at("mean").get<double>()
              << " test_error=" << r.at("test_error").at("mean").get<double>() << '\n';
  return 0;
}

struct BasisOptions {
  std::string input;
  std::string format = "csv";
  std::optional<scml::Index> budget;
  scml::Index regions = 0;
  std::uint64_t seed = 0;
  bool standardize = true;
  std::string output;
  std::optional<std::string> triplets_csv;
};

int cmd_basis(const BasisOptions& o) {
  scml::Dataset data = scml::ingest(o.input, scml::parse_format(o.format));
  json extra = json::object();
  if (o.standardize) {
    const auto s = scml::Standardizer::fit(data.features());
    data = data.with_features(s.apply(data.features()), scml::Normalization::standardized);
    extra["standardizer"] = scml::to_json(s);
  }
  scml::BasisGenConfig cfg;
  cfg.basis_budget = o.budget;
  cfg.num_regions = o.regions;
  cfg.rng_seed = o.seed;
  const auto basis = scml::generate_basis(data, cfg);
  json j = scml::to_json(basis);
  if (!extra.empty()) j["preprocessing"] = extra;
  scml::detail::write_file(o.output, j.dump(2) + "\n");
  std::cout << "wrote " << basis.size() << " basis elements (D=" << basis.dim() << ") to " << o.output << '\n';

  if (o.triplets_csv) {
    const auto set = scml::generate_triplets(data);
    std::ostringstream os;
    os << "anchor,target,impostor\n";
    for (const auto& t : set.triplets) os << t.anchor << ',' << t.target << ',' << t.impostor << '\n';
    scml::detail::write_file(*o.triplets_csv, os.str());
    std::cout << "wrote " << set.triplets.size() << " triplets to " << *o.triplets_csv << '\n';
  }
  return 0;
}

struct EvalOptions {
  std::string model;
  std::string train;
  std::string test;
  std::string format = "csv";
  int k = 3;
  scml::Index task = 0;
};

scml::Dataset preprocess(const scml::Dataset& d, const json& model) {
  if (!model.contains("preprocessing")) return d;
  const auto& p = model.at("preprocessing");
  std::optional<scml::Standardizer> s;
  std::optional<scml::PcaModel> pca;
  if (p.contains("standardizer")) s = scml::standardizer_from_json(p.at("standardizer"));
  if (p.contains("pca")) pca = scml::pca_from_json(p.at("pca"));
  return d.with_features(scml::apply_preprocessing(d.features(), s, pca),
                         s ? scml::Normalization::standardized : d.normalization());
}

int cmd_eval(const EvalOptions& o) {
  const json model = read_json(o.model);
  const auto fmt = scml::parse_format(o.format);
  const auto train = preprocess(scml::ingest(o.train, fmt), model);
  const auto test = preprocess(scml::ingest(o.test, fmt), model);
  const std::string kind = model.at("kind").get<std::string>();
  double err = 0.0;
  if (kind == "global") {
    err = scml::error_rate(scml::GlobalMetric(scml::global_model_from_json(model)), train, test, o.k);
  } else if (kind == "multitask") {
    const auto m = scml::multitask_model_from_json(model);
    if (o.task < 0 || o.task >= m.num_tasks()) scml::detail::fail("--task out of range (", m.num_tasks(), " tasks)");
    err = scml::error_rate(scml::GlobalMetric(m.basis, m.task_weights(o.task)), train, test, o.k);
  } else if (kind == "local") {
    err = scml::error_rate(scml::LocalMetric(scml::local_model_from_json(model)), train, test, o.k);
  } else {
    scml::detail::fail("unknown model kind '", kind, "'");
  }
  std::cout << std::setprecision(17) << "kind=" << kind << " k=" << o.k << " test_error=" << err << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse compositional metric learning"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  add_run_flags(run, run_opts);

  RunOptions sweep_opts;
  std::vector<scml::Index> budgets{50, 100, 200, 400};
  bool sweep_local = false;
  auto* sweep = app.add_subcommand("sweep", "selected-basis count and error versus basis budget");
  add_run_flags(sweep, sweep_opts);
  sweep->add_option("--budgets", budgets, "basis budgets K")->delimiter(',');
  sweep->add_flag("--local", sweep_local, "also fit the local model at each budget");

  BasisOptions basis_opts;
  auto* basis = app.add_subcommand("basis", "generate a basis set and save it as JSON");
  basis->add_option("-i,--input", basis_opts.input, "dataset")->required()->check(CLI::ExistingFile);
  basis->add_option("--format", basis_opts.format, "csv | libsvm");
  basis->add_option("--budget", basis_opts.budget, "basis budget K");
  basis->add_option("--regions", basis_opts.regions, "k-means regions (0 = derive from budget)");
  basis->add_option("--seed", basis_opts.seed, "clustering seed");
  basis->add_flag("!--no-standardize", basis_opts.standardize, "use raw features");
  basis->add_option("-o,--output", basis_opts.output, "basis JSON")->required();
  basis->add_option("--triplets", basis_opts.triplets_csv, "also write the triplet list as CSV");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "k-NN test error of a saved model");
  eval->add_option("--model", eval_opts.model, "model JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--train", eval_opts.train, "reference (training) set")->required()->check(CLI::ExistingFile);
  eval->add_option("--test", eval_opts.test, "evaluation set")->required()->check(CLI::ExistingFile);
  eval->add_option("--format", eval_opts.format, "csv | libsvm");
  eval->add_option("-k", eval_opts.k, "neighbors");
  eval->add_option("--task", eval_opts.task, "task row for multitask models");

  double gamma = 0, radius = 1, kstar = 1, beta = 1, loss_bound = 1, cover = 1, n = 1, delta = 0.05;
  auto* bound = app.add_subcommand("bound", "evaluate the robustness generalization bound");
  bound->add_option("--gamma", gamma, "cover radius gamma")->required();
  bound->add_option("--radius", radius, "data radius R")->required();
  bound->add_option("--kstar", kstar, "basis norm constant K*")->required();
  bound->add_option("--beta", beta, "regularization weight")->required();
  bound->add_option("--loss-bound", loss_bound, "loss upper bound U")->required();
  bound->add_option("--cover", cover, "cover size N")->required();
  bound->add_option("--n", n, "training triplets n")->required();
  bound->add_option("--delta", delta, "confidence delta")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, budgets, sweep_local);
    if (*basis) return cmd_basis(basis_opts);
    if (*eval) return cmd_eval(eval_opts);
    if (*bound) {
      std::cout << std::setprecision(17)
                << scml::robustness_bound(gamma, radius, kstar, beta, loss_bound, cover, n, delta) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
