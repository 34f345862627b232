#pragma once

// Experiment orchestration: per seed, split -> standardize (train stats) ->
// optional PCA -> basis -> triplets -> beta selection + fit -> test error,
// then a JSON report plus CSV tables and traces.

#include "scml/basisgen.hpp"
#include "scml/core.hpp"
#include "scml/embed.hpp"
#include "scml/eval.hpp"
#include "scml/io.hpp"
#include "scml/models.hpp"
#include "scml/optim.hpp"
#include "scml/triplets.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace scml {

enum class Mode { euclidean_baseline, global, multitask, local };

inline Mode parse_mode(std::string_view s) {
  if (s == "euclidean-baseline" || s == "euclidean") return Mode::euclidean_baseline;
  if (s == "global") return Mode::global;
  if (s == "multitask") return Mode::multitask;
  if (s == "local") return Mode::local;
  detail::fail("unknown mode '", s, "' (expected global, multitask, local or euclidean-baseline)");
}

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::euclidean_baseline: return "euclidean-baseline";
    case Mode::global: return "global";
    case Mode::multitask: return "multitask";
    case Mode::local: return "local";
  }
  return "?";
}

struct DatasetSource {
  std::string path;
  DataFormat format = DataFormat::csv;
};

inline BasisGenConfig default_basisgen() {
  BasisGenConfig b;
  b.basis_budget = 400;
  return b;
}

/// Forward-backward defaults: the kPCA-embedded objective needs a larger
/// step than the dual-averaging stage to move A away from zero, and the
/// validation curve is too noisy for early stopping; the full schedule runs
/// and the best-validation iterate is kept.
inline TrainConfig default_local_train() {
  TrainConfig t;
  t.eta0 = 3.0;
  t.epochs = 30;
  t.early_stop_patience = 0;
  return t;
}

struct ExperimentConfig {
  std::vector<DatasetSource> datasets;
  Mode mode = Mode::global;
  bool standardize = true;
  std::optional<Index> pca_dim;
  BasisGenConfig basisgen = default_basisgen();
  TripletConfig triplets;
  TrainConfig train;
  TrainConfig local_train = default_local_train();  // forward-backward stage
  std::vector<double> beta_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> local_beta_grid{1e-5, 1e-4, 1e-3};
  Index embedding_dim = 40;
  int k = 3;
  SplitSpec split;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "scml-out";
  bool save_models = true;
  int threads = 1;
  json raw;  // echo of the parsed document with overrides applied

  void validate() const {
    if (datasets.empty()) detail::fail("config: no datasets");
    if (mode == Mode::multitask && datasets.size() < 2) detail::fail("config: multitask needs >= 2 datasets");
    if (mode != Mode::multitask && datasets.size() != 1) detail::fail("config: mode needs exactly one dataset");
    if (seeds.empty()) detail::fail("config: no seeds");
    if (beta_grid.empty()) detail::fail("config: empty beta_grid");
    if (mode == Mode::local && local_beta_grid.empty()) detail::fail("config: empty local_beta_grid");
    if (embedding_dim < 1) detail::fail("config: embedding_dim must be >= 1");
    if (k < 1) detail::fail("config: k must be >= 1");
    if (threads < 1) detail::fail("config: threads must be >= 1");
    train.validate();
    local_train.validate();
  }
};

/// Parses a config document. Relative dataset paths resolve against `base_dir`.
inline ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  for (const auto& d : j.at("datasets")) {
    DatasetSource src;
    std::filesystem::path p = d.is_string() ? d.get<std::string>() : d.at("path").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    src.path = p.lexically_normal().string();
    if (d.is_object()) src.format = parse_format(d.value("format", std::string("csv")));
    c.datasets.push_back(std::move(src));
  }
  c.mode = parse_mode(j.value("mode", std::string("global")));
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    c.standardize = p.value("standardize", true);
    if (p.contains("pca_dim") && !p.at("pca_dim").is_null()) c.pca_dim = p.at("pca_dim").get<Index>();
  }
  if (j.contains("basisgen")) c.basisgen = basisgen_config_from_json(j.at("basisgen"), c.basisgen);
  if (j.contains("triplets")) {
    c.triplets.n_targets = j.at("triplets").value("n_targets", c.triplets.n_targets);
    c.triplets.n_impostors = j.at("triplets").value("n_impostors", c.triplets.n_impostors);
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("local_train")) c.local_train = train_config_from_json(j.at("local_train"), c.local_train);
  if (j.contains("beta_grid")) c.beta_grid = j.at("beta_grid").get<std::vector<double>>();
  if (j.contains("local_beta_grid")) c.local_beta_grid = j.at("local_beta_grid").get<std::vector<double>>();
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.k = j.value("k", c.k);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (s.contains("counts")) {
      const auto v = s.at("counts").get<std::vector<Index>>();
      if (v.size() != 3) detail::fail("config: split.counts needs 3 entries");
      c.split = SplitSpec::from_counts(v[0], v[1], v[2]);
    } else if (s.contains("ratios")) {
      const auto v = s.at("ratios").get<std::vector<double>>();
      if (v.size() != 3) detail::fail("config: split.ratios needs 3 entries");
      c.split.ratios = std::array<double, 3>{v[0], v[1], v[2]};
    }
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.output_dir = j.value("output_dir", c.output_dir);
  if (!c.output_dir.empty() && std::filesystem::path(c.output_dir).is_relative() && !base_dir.empty())
    c.output_dir = (base_dir / c.output_dir).lexically_normal().string();
  c.save_models = j.value("save_models", c.save_models);
  c.threads = j.value("threads", c.threads);
  c.raw = j;
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::fail("cannot open config '", path, "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    detail::fail(path, ": ", e.what());
  }
  return experiment_config_from_json(j, std::filesystem::path(path).parent_path());
}

/// Config echo for reports, reflecting the effective (parsed) settings.
inline json config_echo(const ExperimentConfig& c) {
  json ds = json::array();
  for (const auto& d : c.datasets) ds.push_back({{"path", d.path}, {"format", d.format == DataFormat::csv ? "csv" : "libsvm"}});
  json split;
  if (c.split.counts)
    split["counts"] = *c.split.counts;
  else
    split["ratios"] = *c.split.ratios;
  return {{"datasets", ds},
          {"mode", mode_name(c.mode)},
          {"preprocessing", {{"standardize", c.standardize}, {"pca_dim", c.pca_dim ? json(*c.pca_dim) : json(nullptr)}}},
          {"basisgen", to_json(c.basisgen)},
          {"triplets", {{"n_targets", c.triplets.n_targets}, {"n_impostors", c.triplets.n_impostors}}},
          {"train", to_json(c.train)},
          {"local_train", to_json(c.local_train)},
          {"beta_grid", c.beta_grid},
          {"local_beta_grid", c.local_beta_grid},
          {"embedding_dim", c.embedding_dim},
          {"k", c.k},
          {"split", split},
          {"seeds", c.seeds}};
}

// ---------------------------------------------------------------------------
// Per-seed preparation
// ---------------------------------------------------------------------------

/// Train/validation/test sets after preprocessing fit on the train split only.
struct PreparedSplit {
  Split indices;
  Dataset train, val, test;
  std::optional<Standardizer> standardizer;
  std::optional<PcaModel> pca;

  json preprocessing_json() const {
    json j = json::object();
    if (standardizer) j["standardizer"] = to_json(*standardizer);
    if (pca) j["pca"] = to_json(*pca);
    return j;
  }
};

inline Matrix apply_preprocessing(const Matrix& x, const std::optional<Standardizer>& s,
                                  const std::optional<PcaModel>& pca) {
  Matrix out = s ? s->apply(x) : x;
  if (pca) out = pca_transform_rows(*pca, out);
  return out;
}

inline PreparedSplit prepare_split(const Dataset& data, const SplitSpec& spec, std::uint64_t seed, bool standardize,
                                   std::optional<Index> pca_dim) {
  PreparedSplit out;
  out.indices = split(data, spec, seed);
  if (out.indices.train.empty()) detail::fail("split produced an empty training set");
  const Dataset train_raw = data.subset(out.indices.train);
  if (standardize) out.standardizer = Standardizer::fit(train_raw.features());
  if (pca_dim) {
    const Matrix base = out.standardizer ? out.standardizer->apply(train_raw.features()) : train_raw.features();
    out.pca = pca_fit(base, *pca_dim);
  }
  const Normalization state = standardize ? Normalization::standardized : Normalization::raw;
  auto prepare = [&](const std::vector<Index>& idx) {
    const Dataset raw = data.subset(idx);
    if (idx.empty()) return raw;
    return raw.with_features(apply_preprocessing(raw.features(), out.standardizer, out.pca), state);
  };
  out.train = prepare(out.indices.train);
  if (!out.indices.val.empty()) out.val = prepare(out.indices.val);
  if (!out.indices.test.empty()) out.test = prepare(out.indices.test);
  return out;
}

// ---------------------------------------------------------------------------
// Fitting helpers
// ---------------------------------------------------------------------------

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

struct GlobalFit {
  BetaSelection<GlobalModel> selection;
  double test_error = 0.0;
};

inline GlobalFit fit_global_selected(const PreparedSplit& s, const BasisSet& basis, const TripletFeatures& features,
                                     const ExperimentConfig& cfg, std::uint64_t seed) {
  if (s.val.size() == 0) detail::fail("beta selection needs a validation split");
  auto score = [&](const GlobalModel& m) { return error_rate(GlobalMetric(m), s.train, s.val, cfg.k); };
  auto fit = [&](double beta) {
    TrainConfig tc = cfg.train;
    tc.beta = beta;
    tc.rng_seed = detail::mix_seed(seed, 2);
    return fit_scml_global(basis, features, tc, score);
  };
  GlobalFit out{select_beta(std::span<const double>(cfg.beta_grid), fit, score), 0.0};
  if (s.test.size() > 0) out.test_error = error_rate(GlobalMetric(out.selection.model), s.train, s.test, cfg.k);
  return out;
}

struct LocalFit {
  BetaSelection<LocalModel> selection;
  double test_error = 0.0;
};

inline LocalFit fit_local_selected(const PreparedSplit& s, const LocalFitContext& ctx, const BasisSet& basis,
                                   const TripletFeatures& features, const GlobalModel& warm,
                                   const ExperimentConfig& cfg, std::uint64_t seed) {
  auto score = [&](const LocalModel& m) { return error_rate(LocalMetric(m), s.train, s.val, cfg.k); };
  auto fit = [&](double beta) {
    TrainConfig tc = cfg.local_train;
    tc.beta = beta;
    tc.rng_seed = detail::mix_seed(seed, 3);
    return fit_scml_local(ctx, basis, features, tc, warm, score);
  };
  LocalFit out{select_beta(std::span<const double>(cfg.local_beta_grid), fit, score), 0.0};
  if (s.test.size() > 0) out.test_error = error_rate(LocalMetric(out.selection.model), s.train, s.test, cfg.k);
  return out;
}

inline json grid_json(const std::vector<std::pair<double, double>>& grid) {
  json g = json::array();
  for (const auto& [b, e] : grid) g.push_back({b, e});
  return g;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct SummaryStat {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t count = 0;
};

/// Mean and standard error (sample standard deviation / sqrt(count)).
inline SummaryStat summarize(const std::vector<double>& values) {
  SummaryStat s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    s.stderr_ = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

inline json summary_json(const std::vector<double>& values) {
  const auto s = summarize(values);
  return {{"mean", s.mean}, {"stderr", s.stderr_}, {"count", s.count}};
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string reason;
  json result = json::object();   // deterministic content
  json runtime = json::object();  // seconds per stage
  std::map<std::string, std::string> files;  // relative name -> content
};

namespace detail {

inline std::string trace_csv(const SolveTrace& t) {
  std::ostringstream os;
  write_trace_csv(os, t);
  return os.str();
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

/// Per-training-point 2D PCA of features and 1D PCA of local weight vectors.
inline std::string local_projection_csv(const Dataset& train, const LocalModel& model) {
  const Matrix w = LocalMetric(model).query_weights(train.features());
  const Index dim = std::min<Index>(2, std::min(train.size(), train.dim()));
  const Matrix feat2 = pca_transform_rows(pca_fit(train.features(), dim), train.features());
  Matrix w1 = Matrix::Zero(train.size(), 1);
  if (w.cols() > 0) w1 = pca_transform_rows(pca_fit(w, 1), w);
  std::ostringstream os;
  os << std::setprecision(17) << "index,label,feature_pc1,feature_pc2,weight_pc1\n";
  for (Index i = 0; i < train.size(); ++i) {
    os << i << ',' << train.label(i) << ',' << feat2(i, 0) << ',' << (dim > 1 ? feat2(i, 1) : 0.0) << ','
       << w1(i, 0) << '\n';
  }
  return os.str();
}

}  // namespace detail

/// Runs every seed of a single-dataset mode (global, local, euclidean).
inline SeedOutcome run_single_seed(const Dataset& data, const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  out.result["seed"] = seed;
  const auto total_start = detail::Clock::now();
  const std::string tag = "seed" + std::to_string(seed);
  try {
    auto start = detail::Clock::now();
    const PreparedSplit s = prepare_split(data, cfg.split, seed, cfg.standardize, cfg.pca_dim);
    out.runtime["prepare"] = detail::seconds_since(start);
    out.result["sizes"] = {s.train.size(), s.val.size(), s.test.size()};

    start = detail::Clock::now();
    if (s.test.size() > 0)
      out.result["euclidean"] = {{"test_error", error_rate(EuclideanMetric{}, s.train, s.test, cfg.k)}};
    out.runtime["euclidean"] = detail::seconds_since(start);

    if (cfg.mode != Mode::euclidean_baseline) {
      start = detail::Clock::now();
      BasisGenConfig bcfg = cfg.basisgen;
      bcfg.rng_seed = detail::mix_seed(seed, 0) ^ cfg.basisgen.rng_seed;
      const BasisSet basis = generate_basis(s.train, bcfg);
      out.runtime["basis"] = detail::seconds_since(start);

      start = detail::Clock::now();
      const TripletSet triplets = generate_triplets(s.train, cfg.triplets);
      if (triplets.triplets.empty()) detail::fail("no triplets could be formed");
      const TripletFeatures features = triplet_features(s.train, basis, triplets.triplets);
      out.runtime["triplets"] = detail::seconds_since(start);
      out.result["basis_size"] = basis.size();
      out.result["num_triplets"] = triplets.triplets.size();
      out.result["anchors_without_targets"] = triplets.anchors_without_targets;

      start = detail::Clock::now();
      const GlobalFit g = fit_global_selected(s, basis, features, cfg, seed);
      out.runtime["global_fit"] = detail::seconds_since(start);
      const auto& gm = g.selection.model;
      out.result["global"] = {{"beta", g.selection.beta},
                              {"validation_error", g.selection.validation_error},
                              {"test_error", g.test_error},
                              {"nnz", gm.nnz()},
                              {"grid", grid_json(g.selection.grid_errors)},
                              {"trace", trace_summary(gm.trace)}};
      out.files["trace_global_" + tag + ".csv"] = detail::trace_csv(gm.trace);
      json extra = {{"preprocessing", s.preprocessing_json()}, {"seed", seed}};
      if (cfg.save_models) out.files["model_global_" + tag + ".json"] = detail::dump_json(model_to_json(gm, extra));

      if (cfg.mode == Mode::local) {
        start = detail::Clock::now();
        const auto ctx = LocalFitContext::build(s.train, cfg.embedding_dim);
        const LocalFit l = fit_local_selected(s, ctx, basis, features, gm, cfg, seed);
        out.runtime["local_fit"] = detail::seconds_since(start);
        const auto& lm = l.selection.model;
        out.result["local"] = {{"beta", l.selection.beta},
                               {"validation_error", l.selection.validation_error},
                               {"test_error", l.test_error},
                               {"selected", lm.selected_columns().size()},
                               {"embedding_dim", lm.embedding_dim()},
                               {"embedding_truncated", ctx.embedding->truncated},
                               {"grid", grid_json(l.selection.grid_errors)},
                               {"trace", trace_summary(lm.trace)}};
        out.files["trace_local_" + tag + ".csv"] = detail::trace_csv(lm.trace);
        out.files["projection_" + tag + ".csv"] = detail::local_projection_csv(s.train, lm);
        if (cfg.save_models) out.files["model_local_" + tag + ".json"] = detail::dump_json(model_to_json(lm, extra));
      }
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.reason = e.what();
  }
  out.result["status"] = out.ok ? "ok" : "failed";
  if (!out.ok) out.result["reason"] = out.reason;
  out.runtime["total"] = detail::seconds_since(total_start);
  return out;
}

/// Multi-task seed: per-task split/basis/triplets; mt-SCML on the union basis
/// against independent per-task SCML-Global fits.
inline SeedOutcome run_multitask_seed(const std::vector<Dataset>& tasks, const ExperimentConfig& cfg,
                                      std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  out.result["seed"] = seed;
  const auto total_start = detail::Clock::now();
  const std::string tag = "seed" + std::to_string(seed);
  try {
    auto start = detail::Clock::now();
    std::vector<PreparedSplit> splits;
    std::vector<BasisSet> bases;
    std::vector<std::vector<Triplet>> triplets;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      splits.push_back(prepare_split(tasks[t], cfg.split, detail::mix_seed(seed, 10 + t), cfg.standardize, cfg.pca_dim));
      BasisGenConfig bcfg = cfg.basisgen;
      bcfg.rng_seed = detail::mix_seed(seed, 100 + t) ^ cfg.basisgen.rng_seed;
      bases.push_back(generate_basis(splits.back().train, bcfg));
      triplets.push_back(generate_triplets(splits.back().train, cfg.triplets).triplets);
      if (triplets.back().empty()) detail::fail("task ", t, ": no triplets could be formed");
    }
    out.runtime["prepare"] = detail::seconds_since(start);

    // Independent per-task fits on each task's own basis.
    start = detail::Clock::now();
    json single = json::array();
    std::vector<double> st_errors, euc_errors;
    Index st_nnz_total = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto f = triplet_features(splits[t].train, bases[t], triplets[t]);
      const GlobalFit g = fit_global_selected(splits[t], bases[t], f, cfg, detail::mix_seed(seed, 200 + t));
      const double euc = error_rate(EuclideanMetric{}, splits[t].train, splits[t].test, cfg.k);
      st_errors.push_back(g.test_error);
      euc_errors.push_back(euc);
      st_nnz_total += g.selection.model.nnz();
      single.push_back({{"task", t},
                        {"beta", g.selection.beta},
                        {"test_error", g.test_error},
                        {"euclidean_test_error", euc},
                        {"nnz", g.selection.model.nnz()}});
    }
    out.runtime["single_task_fits"] = detail::seconds_since(start);

    start = detail::Clock::now();
    const BasisSet union_basis = BasisSet::concat(bases);
    std::vector<TripletFeatures> features;
    for (std::size_t t = 0; t < tasks.size(); ++t)
      features.push_back(triplet_features(splits[t].train, union_basis, triplets[t]));
    auto task_errors = [&](const MultiTaskModel& m, bool test) {
      std::vector<double> errs;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const GlobalMetric metric(m.basis, m.task_weights(static_cast<Index>(t)));
        errs.push_back(error_rate(metric, splits[t].train, test ? splits[t].test : splits[t].val, cfg.k));
      }
      return errs;
    };
    auto mean = [](const std::vector<double>& v) { return summarize(v).mean; };
    auto score = [&](const MultiTaskModel& m) { return mean(task_errors(m, false)); };
    auto fit = [&](double beta) {
      TrainConfig tc = cfg.train;
      tc.beta = beta;
      tc.rng_seed = detail::mix_seed(seed, 4);
      return fit_mt_scml(union_basis, features, tc, score);
    };
    const auto sel = select_beta(std::span<const double>(cfg.beta_grid), fit, score);
    const auto mt_errors = task_errors(sel.model, true);
    out.runtime["multitask_fit"] = detail::seconds_since(start);

    out.result["single_task"] = {{"tasks", single},
                                 {"mean_test_error", mean(st_errors)},
                                 {"total_nnz", st_nnz_total}};
    out.result["euclidean"] = {{"test_error", mean(euc_errors)}};
    out.result["multitask"] = {{"beta", sel.beta},
                               {"validation_error", sel.validation_error},
                               {"task_test_errors", mt_errors},
                               {"test_error", mean(mt_errors)},
                               {"basis_size", union_basis.size()},
                               {"selected", sel.model.selected_columns().size()},
                               {"grid", grid_json(sel.grid_errors)},
                               {"trace", trace_summary(sel.model.trace)}};
    out.files["trace_multitask_" + tag + ".csv"] = detail::trace_csv(sel.model.trace);
    if (cfg.save_models) {
      json extra = {{"seed", seed}};
      out.files["model_multitask_" + tag + ".json"] = detail::dump_json(model_to_json(sel.model, extra));
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.reason = e.what();
  }
  out.result["status"] = out.ok ? "ok" : "failed";
  if (!out.ok) out.result["reason"] = out.reason;
  out.runtime["total"] = detail::seconds_since(total_start);
  return out;
}

namespace detail {

/// Runs `job(i)` for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '", path.string(), "'");
  out << content;
}

inline std::optional<double> dig(const json& j, std::initializer_list<const char*> keys) {
  const json* at = &j;
  for (const char* k : keys) {
    if (!at->is_object() || !at->contains(k)) return std::nullopt;
    at = &at->at(k);
  }
  if (!at->is_number()) return std::nullopt;
  return at->get<double>();
}

}  // namespace detail

struct ExperimentReport {
  json report;  // includes "runtimes"
  std::vector<SeedOutcome> seeds;

  /// The report without the runtime field; stable across identical runs.
  json deterministic() const {
    json j = report;
    j.erase("runtimes");
    return j;
  }
};

inline std::vector<Dataset> load_datasets(const ExperimentConfig& cfg) {
  std::vector<Dataset> out;
  for (const auto& d : cfg.datasets) out.push_back(ingest(d.path, d.format));
  if (cfg.mode == Mode::multitask) {
    for (const auto& d : out) detail::require_dim(d.dim(), out.front().dim(), "multitask datasets feature dimension");
  }
  return out;
}

/// Runs the configured experiment and, when `write` is set, writes
/// report.json, results.csv and per-seed traces / models to output_dir.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, bool write = true) {
  cfg.validate();
  const auto start = detail::Clock::now();
  const auto data = load_datasets(cfg);
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  detail::parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    outcomes[i] = cfg.mode == Mode::multitask ? run_multitask_seed(data, cfg, cfg.seeds[i])
                                              : run_single_seed(data.front(), cfg, cfg.seeds[i]);
  });
  const bool any_ok = std::any_of(outcomes.begin(), outcomes.end(), [](const SeedOutcome& o) { return o.ok; });

  json per_seed = json::array();
  json runtimes = json::object();
  std::map<std::string, std::vector<double>> series;
  const std::vector<std::pair<std::string, std::vector<const char*>>> tracked = {
      {"euclidean_test_error", {"euclidean", "test_error"}},
      {"global_test_error", {"global", "test_error"}},
      {"global_nnz", {"global", "nnz"}},
      {"local_test_error", {"local", "test_error"}},
      {"local_selected", {"local", "selected"}},
      {"multitask_test_error", {"multitask", "test_error"}},
      {"multitask_selected", {"multitask", "selected"}},
      {"single_task_test_error", {"single_task", "mean_test_error"}},
      {"single_task_total_nnz", {"single_task", "total_nnz"}}};
  for (const auto& o : outcomes) {
    per_seed.push_back(o.result);
    runtimes["seed" + std::to_string(o.seed)] = o.runtime;
    if (!o.ok) continue;
    for (const auto& [name, path] : tracked) {
      const json* at = &o.result;
      bool found = true;
      for (const char* k : path) {
        if (!at->contains(k)) {
          found = false;
          break;
        }
        at = &at->at(k);
      }
      if (found && at->is_number()) series[name].push_back(at->get<double>());
    }
  }
  json summary = json::object();
  for (const auto& [name, values] : series) summary[name] = summary_json(values);
  runtimes["total"] = detail::seconds_since(start);

  ExperimentReport rep;
  rep.report = {{"mode", mode_name(cfg.mode)},
                {"status", any_ok ? "ok" : "failed"},
                {"config", config_echo(cfg)},
                {"seeds", per_seed},
                {"summary", summary},
                {"runtimes", runtimes}};

  if (write) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "report.json", detail::dump_json(rep.report));
    std::ostringstream csv;
    csv << std::setprecision(17) << "seed,status,euclidean_test_error,global_test_error,global_nnz,local_test_error,"
                                    "local_selected,multitask_test_error,multitask_selected\n";
    for (const auto& o : outcomes) {
      csv << o.seed << ',' << (o.ok ? "ok" : "failed");
      for (auto keys : {std::initializer_list<const char*>{"euclidean", "test_error"}, {"global", "test_error"},
                        {"global", "nnz"}, {"local", "test_error"}, {"local", "selected"},
                        {"multitask", "test_error"}, {"multitask", "selected"}}) {
        csv << ',';
        if (const auto v = detail::dig(o.result, keys)) csv << *v;
      }
      csv << '\n';
    }
    detail::write_file(dir / "results.csv", csv.str());
    for (const auto& o : outcomes)
      for (const auto& [name, content] : o.files) detail::write_file(dir / name, content);
  }
  rep.seeds = std::move(outcomes);
  if (!any_ok) {
    std::string reasons;
    for (const auto& o : rep.seeds) reasons += "\n  seed " + std::to_string(o.seed) + ": " + o.reason;
    detail::fail("experiment failed for every seed:", reasons);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Basis-count sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string mode;
  Index budget = 0;
  std::uint64_t seed = 0;
  Index basis_size = 0;
  Index selected = 0;
  double test_error = 0.0;
};

/// For each basis budget K (ascending) and seed: fit the global model (and the
/// local one when `with_local`), recording selected-basis counts and test
/// errors. Split and triplets are shared across budgets within a seed.
inline std::vector<SweepRow> basis_sweep(const ExperimentConfig& cfg, std::span<const Index> budgets,
                                         bool with_local) {
  if (budgets.empty()) detail::fail("basis_sweep: no budgets");
  if (!std::is_sorted(budgets.begin(), budgets.end())) detail::fail("basis_sweep: budgets must be ascending");
  const auto data = load_datasets(cfg);
  if (data.size() != 1) detail::fail("basis_sweep: needs exactly one dataset");
  std::vector<std::vector<SweepRow>> per_seed(cfg.seeds.size());
  detail::parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const PreparedSplit s = prepare_split(data.front(), cfg.split, seed, cfg.standardize, cfg.pca_dim);
    const TripletSet triplets = generate_triplets(s.train, cfg.triplets);
    std::optional<LocalFitContext> ctx;
    if (with_local) ctx = LocalFitContext::build(s.train, cfg.embedding_dim);
    for (Index budget : budgets) {
      BasisGenConfig bcfg = cfg.basisgen;
      bcfg.basis_budget = budget;
      bcfg.num_regions = 0;
      bcfg.rng_seed = detail::mix_seed(seed, 0) ^ cfg.basisgen.rng_seed;
      const BasisSet basis = generate_basis(s.train, bcfg);
      const auto features = triplet_features(s.train, basis, triplets.triplets);
      const GlobalFit g = fit_global_selected(s, basis, features, cfg, seed);
      per_seed[i].push_back({"global", budget, seed, basis.size(), g.selection.model.nnz(), g.test_error});
      if (with_local) {
        const LocalFit l = fit_local_selected(s, *ctx, basis, features, g.selection.model, cfg, seed);
        per_seed[i].push_back({"local", budget, seed, basis.size(),
                               static_cast<Index>(l.selection.model.selected_columns().size()), l.test_error});
      }
    }
  });
  std::vector<SweepRow> rows;
  for (auto& v : per_seed) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

/// Mean selected count and test error per (mode, budget), in budget order.
inline json sweep_summary(const std::vector<SweepRow>& rows) {
  std::map<std::pair<std::string, Index>, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) groups[{r.mode, r.budget}].push_back(&r);
  json out = json::array();
  for (const auto& [key, members] : groups) {
    std::vector<double> sel, err, size;
    for (const auto* r : members) {
      sel.push_back(static_cast<double>(r->selected));
      err.push_back(r->test_error);
      size.push_back(static_cast<double>(r->basis_size));
    }
    out.push_back({{"mode", key.first},
                   {"K", key.second},
                   {"basis_size", summary_json(size)},
                   {"selected", summary_json(sel)},
                   {"test_error", summary_json(err)}});
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17) << "mode,K,seed,basis_size,selected,test_error\n";
  for (const auto& r : rows)
    os << r.mode << ',' << r.budget << ',' << r.seed << ',' << r.basis_size << ',' << r.selected << ','
       << r.test_error << '\n';
  return os.str();
}

}  // namespace scml
