#pragma once

// Dataset ingestion (CSV, LIBSVM), feature standardization, and JSON / CSV
// serialization of bases, models and traces.

#include "scml/basisgen.hpp"
#include "scml/core.hpp"
#include "scml/embed.hpp"
#include "scml/models.hpp"
#include "scml/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace scml {

using json = nlohmann::json;

enum class DataFormat { csv, libsvm };

inline DataFormat parse_format(std::string_view s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "libsvm") return DataFormat::libsvm;
  detail::fail("unknown data format '", s, "' (expected csv or libsvm)");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Dense class ids for raw label strings: numeric order when every label is
/// numeric, lexicographic otherwise.
inline std::vector<int> remap_labels(const std::vector<std::string>& raw) {
  std::vector<std::string> unique = raw;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  const bool numeric = std::all_of(unique.begin(), unique.end(), [](const std::string& s) {
    return parse_number(s).has_value();
  });
  if (numeric) {
    std::stable_sort(unique.begin(), unique.end(),
                     [](const std::string& a, const std::string& b) { return *parse_number(a) < *parse_number(b); });
  }
  std::map<std::string, int> id;
  for (const auto& u : unique) id.emplace(u, static_cast<int>(id.size()));
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = id.at(raw[i]);
  return out;
}

}  // namespace detail

/// CSV: last column is the label, the rest numeric features. A first row
/// whose feature fields are not all numeric is taken as a header.
inline Dataset read_csv(std::istream& in) {
  std::string line;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::vector<std::string> names;
  std::size_t width = 0;
  long line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line, ',');
    if (fields.size() < 2) detail::fail("csv line ", line_no, ": need at least one feature and a label");
    std::vector<double> values;
    values.reserve(fields.size() - 1);
    bool numeric = true;
    for (std::size_t c = 0; c + 1 < fields.size(); ++c) {
      const auto v = detail::parse_number(fields[c]);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (first) {
      first = false;
      width = fields.size();
      if (!numeric) {
        for (std::size_t c = 0; c + 1 < fields.size(); ++c) names.emplace_back(fields[c]);
        continue;
      }
    }
    if (fields.size() != width)
      detail::fail("csv line ", line_no, ": expected ", width, " fields, found ", fields.size());
    if (!numeric) detail::fail("csv line ", line_no, ": non-numeric feature value");
    if (fields.back().empty()) detail::fail("csv line ", line_no, ": empty label");
    rows.push_back(std::move(values));
    raw_labels.emplace_back(fields.back());
  }
  if (rows.empty()) detail::fail("csv: no data rows");
  Matrix x(static_cast<Index>(rows.size()), static_cast<Index>(width - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) x(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return Dataset(std::move(x), detail::remap_labels(raw_labels), std::move(names));
}

/// LIBSVM: "label idx:value ..." with 1-based indices, densified. The
/// dimension is the largest index seen unless `dim` is given.
inline Dataset read_libsvm(std::istream& in, std::optional<Index> dim = std::nullopt) {
  std::string line;
  std::vector<std::vector<std::pair<Index, double>>> rows;
  std::vector<std::string> raw_labels;
  Index max_index = 0;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream tokens(line);
    std::string tok;
    if (!(tokens >> tok)) continue;
    raw_labels.push_back(tok);
    std::vector<std::pair<Index, double>> entries;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) detail::fail("libsvm line ", line_no, ": malformed entry '", tok, "'");
      const auto idx = detail::parse_number(std::string_view(tok).substr(0, colon));
      const auto val = detail::parse_number(std::string_view(tok).substr(colon + 1));
      if (!idx || !val || *idx < 1 || *idx != std::floor(*idx))
        detail::fail("libsvm line ", line_no, ": malformed entry '", tok, "'");
      const auto i = static_cast<Index>(*idx);
      max_index = std::max(max_index, i);
      entries.emplace_back(i - 1, *val);
    }
    rows.push_back(std::move(entries));
  }
  if (rows.empty()) detail::fail("libsvm: no data rows");
  const Index d = dim.value_or(max_index);
  if (d < max_index) detail::fail("libsvm: feature index ", max_index, " exceeds dimension ", d);
  if (d < 1) detail::fail("libsvm: no features");
  Matrix x = Matrix::Zero(static_cast<Index>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& [c, v] : rows[r]) x(static_cast<Index>(r), c) = v;
  return Dataset(std::move(x), detail::remap_labels(raw_labels));
}

inline Dataset ingest(const std::string& path, DataFormat format = DataFormat::csv) {
  std::ifstream in(path);
  if (!in) detail::fail("cannot open '", path, "'");
  try {
    return format == DataFormat::csv ? read_csv(in) : read_libsvm(in);
  } catch (const Error& e) {
    detail::fail(path, ": ", e.what());
  }
}

/// Writes features with 17 significant digits and integer labels last.
inline void write_csv(std::ostream& out, const Dataset& data, bool header = false) {
  out << std::setprecision(17);
  if (header) {
    for (Index c = 0; c < data.dim(); ++c) {
      if (!data.feature_names().empty())
        out << data.feature_names()[static_cast<std::size_t>(c)];
      else
        out << 'x' << c;
      out << ',';
    }
    out << "label\n";
  }
  for (Index i = 0; i < data.size(); ++i) {
    for (Index c = 0; c < data.dim(); ++c) out << data.features()(i, c) << ',';
    out << data.label(i) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature zero mean / unit variance using statistics of the data it was
/// fit on. Constant features keep scale 1.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale = ((x.rowwise() - s.mean.transpose()).colwise().squaredNorm() / static_cast<double>(x.rows()))
                  .cwiseSqrt()
                  .transpose();
    for (Index c = 0; c < s.scale.size(); ++c)
      if (!(s.scale[c] > 1e-12)) s.scale[c] = 1.0;
    return s;
  }

  Matrix apply(const Matrix& x) const {
    detail::require_dim(x.cols(), mean.size(), "Standardizer");
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array()) detail::fail("json: expected a matrix (array of rows)");
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(row.size()) != cols) detail::fail("json: ragged matrix");
    for (Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) detail::fail("json: expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline json to_json(const BasisSet& basis) {
  json prov = json::array();
  for (const auto& p : basis.provenance()) prov.push_back({{"region", p.region}, {"J", p.j_level}, {"rank", p.rank}});
  return {{"D", basis.dim()}, {"K", basis.size()}, {"vectors", to_json(basis.vectors())}, {"provenance", prov}};
}

inline BasisSet basis_from_json(const json& j) {
  Matrix v = matrix_from_json(j.at("vectors"));
  if (j.contains("K")) detail::require_dim(v.rows(), j.at("K").get<Index>(), "basis json K");
  if (j.contains("D")) detail::require_dim(v.cols(), j.at("D").get<Index>(), "basis json D");
  std::vector<BasisProvenance> prov;
  if (j.contains("provenance")) {
    for (const auto& p : j.at("provenance"))
      prov.push_back({p.value("region", -1), p.value("J", 0), p.value("rank", 0)});
  }
  return BasisSet(std::move(v), std::move(prov));
}

inline json to_json(const Standardizer& s) { return {{"mean", to_json(s.mean)}, {"scale", to_json(s.scale)}}; }

inline Standardizer standardizer_from_json(const json& j) {
  return {vector_from_json(j.at("mean")), vector_from_json(j.at("scale"))};
}

inline json to_json(const PcaModel& m) {
  return {{"mean", to_json(m.mean)}, {"components", to_json(m.components)}, {"variances", to_json(m.variances)}};
}

inline PcaModel pca_from_json(const json& j) {
  PcaModel m;
  m.mean = vector_from_json(j.at("mean"));
  m.components = matrix_from_json(j.at("components"));
  m.variances = vector_from_json(j.at("variances"));
  return m;
}

inline json to_json(const KpcaModel& m) {
  return {{"kernel", "rbf"},
          {"sigma", m.sigma},
          {"train_points", to_json(m.train_points)},
          {"alphas", to_json(m.alphas)},
          {"eigenvalues", to_json(m.eigenvalues)},
          {"gram_row_means", to_json(m.gram_row_means)},
          {"gram_mean", m.gram_mean},
          {"truncated", m.truncated}};
}

inline KpcaModel kpca_from_json(const json& j) {
  KpcaModel m;
  m.sigma = j.at("sigma").get<double>();
  m.train_points = matrix_from_json(j.at("train_points"));
  m.alphas = matrix_from_json(j.at("alphas"));
  m.eigenvalues = vector_from_json(j.at("eigenvalues"));
  m.gram_row_means = vector_from_json(j.at("gram_row_means"));
  m.gram_mean = j.at("gram_mean").get<double>();
  m.truncated = j.value("truncated", false);
  m.train_embedding = (m.alphas.array().rowwise() * m.eigenvalues.transpose().array()).matrix();
  return m;
}

inline json to_json(const TrainConfig& c) {
  return {{"beta", c.beta},         {"gamma_rda", c.gamma_rda}, {"eta0", c.eta0},
          {"epochs", c.epochs},     {"minibatch", c.minibatch}, {"rng_seed", c.rng_seed},
          {"early_stop_patience", c.early_stop_patience}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  c.beta = j.value("beta", c.beta);
  c.gamma_rda = j.value("gamma_rda", c.gamma_rda);
  c.eta0 = j.value("eta0", c.eta0);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.validate();
  return c;
}

inline json to_json(const BasisGenConfig& c) {
  json j = {{"num_regions", c.num_regions},
            {"J_levels", c.j_levels},
            {"max_directions_per_fda", c.max_directions_per_fda},
            {"scatter_ridge", c.scatter_ridge},
            {"rng_seed", c.rng_seed}};
  j["basis_budget"] = c.basis_budget ? json(*c.basis_budget) : json(nullptr);
  return j;
}

inline BasisGenConfig basisgen_config_from_json(const json& j, BasisGenConfig c = {}) {
  c.num_regions = j.value("num_regions", c.num_regions);
  if (j.contains("J_levels")) c.j_levels = j.at("J_levels").get<std::vector<int>>();
  c.max_directions_per_fda = j.value("max_directions_per_fda", c.max_directions_per_fda);
  c.scatter_ridge = j.value("scatter_ridge", c.scatter_ridge);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("basis_budget")) {
    if (j.at("basis_budget").is_null())
      c.basis_budget.reset();
    else
      c.basis_budget = j.at("basis_budget").get<Index>();
  }
  return c;
}

inline json trace_summary(const SolveTrace& t) {
  json j = {{"epochs", t.points.size()}, {"steps", t.steps}, {"early_stopped", t.early_stopped}};
  if (!t.points.empty()) j["final_objective"] = t.points.back().objective;
  return j;
}

inline void write_trace_csv(std::ostream& out, const SolveTrace& t) {
  out << std::setprecision(17) << "epoch,objective,validation_error,nnz\n";
  for (const auto& p : t.points) {
    out << p.epoch << ',' << p.objective << ',';
    if (!std::isnan(p.validation_error)) out << p.validation_error;
    out << ',' << p.nnz << '\n';
  }
}

/// Model JSON: {kind, basis, params, embedding?, config}. `extra` is merged at
/// the top level (e.g. preprocessing statistics).
inline json model_to_json(const GlobalModel& m, const json& extra = json::object()) {
  json j = {{"kind", "global"},
            {"basis", to_json(m.basis)},
            {"params", {{"w", to_json(m.w.values())}, {"beta", m.beta}, {"nnz", m.nnz()}}},
            {"config", {{"trace", trace_summary(m.trace)}}}};
  j.update(extra);
  return j;
}

inline json model_to_json(const MultiTaskModel& m, const json& extra = json::object()) {
  json j = {{"kind", "multitask"},
            {"basis", to_json(m.basis)},
            {"params", {{"W", to_json(m.w)}, {"beta", m.beta}, {"selected_columns", m.selected_columns()}}},
            {"config", {{"trace", trace_summary(m.trace)}}}};
  j.update(extra);
  return j;
}

inline json model_to_json(const LocalModel& m, const json& extra = json::object()) {
  json j = {{"kind", "local"},
            {"basis", to_json(m.basis)},
            {"params", {{"Atilde", to_json(m.atilde)}, {"beta", m.beta}, {"selected_columns", m.selected_columns()}}},
            {"embedding", to_json(*m.embedding)},
            {"config", {{"trace", trace_summary(m.trace)}}}};
  j.update(extra);
  return j;
}

inline GlobalModel global_model_from_json(const json& j) {
  if (j.at("kind") != "global") detail::fail("model json: expected kind 'global'");
  const auto& p = j.at("params");
  return GlobalModel{basis_from_json(j.at("basis")), WeightVector(vector_from_json(p.at("w"))),
                     p.value("beta", 0.0), {}};
}

inline MultiTaskModel multitask_model_from_json(const json& j) {
  if (j.at("kind") != "multitask") detail::fail("model json: expected kind 'multitask'");
  const auto& p = j.at("params");
  return MultiTaskModel{basis_from_json(j.at("basis")), matrix_from_json(p.at("W")), p.value("beta", 0.0), {}};
}

inline LocalModel local_model_from_json(const json& j) {
  if (j.at("kind") != "local") detail::fail("model json: expected kind 'local'");
  const auto& p = j.at("params");
  LocalModel m{basis_from_json(j.at("basis")), matrix_from_json(p.at("Atilde")),
               std::make_shared<KpcaModel>(kpca_from_json(j.at("embedding"))), p.value("beta", 0.0), {}};
  m.check();
  return m;
}

}  // namespace scml
