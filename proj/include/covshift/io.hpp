#pragma once

// CSV datasets with JSON sidecar manifests, and JSON forms of estimator
// specs and fitted models.

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"
#include "covshift/learners.hpp"

#include "json.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace covshift {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') cur.push_back(c);
  }
  out.push_back(cur);
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file and renames, so readers never see a
/// half-written file.
inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + tmp.string());
    out << content;
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct DatasetManifest {
  Task task = Task::Regression;
  int classes = 0;
  std::vector<std::string> labels;  // optional: label text for class 0..m-1
};

inline DatasetManifest manifest_from_json(const Json& j) {
  DatasetManifest m;
  m.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("classes")) m.classes = j.at("classes").get<int>();
  if (j.contains("labels")) m.labels = j.at("labels").get<std::vector<std::string>>();
  if (m.task == Task::Classification && m.classes == 0) m.classes = static_cast<int>(m.labels.size());
  return m;
}

inline Json manifest_to_json(const DatasetManifest& m) {
  Json j{{"task", to_string(m.task)}};
  if (m.task == Task::Classification) j["classes"] = m.classes;
  if (!m.labels.empty()) j["labels"] = m.labels;
  return j;
}

/// `data.csv.json`, falling back to `data.json`.
inline std::optional<fs::path> find_sidecar(const fs::path& csv) {
  const fs::path a = csv.string() + ".json";
  if (fs::exists(a)) return a;
  fs::path b = csv;
  b.replace_extension(".json");
  if (fs::exists(b)) return b;
  // split directories written by inject share one manifest
  const fs::path c = csv.parent_path() / "manifest.json";
  if (fs::exists(c)) return c;
  return std::nullopt;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first) {
      first = false;
      // A header row is one whose covariate fields are not all numeric.
      bool numeric = true;
      for (std::size_t i = 0; i + 1 < fields.size(); ++i) numeric = numeric && parse_double(fields[i]);
      if (fields.size() == 1) numeric = parse_double(fields[0]).has_value();
      if (!numeric) {
        t.header = std::move(fields);
        continue;
      }
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

struct LoadedDataset {
  Dataset data;
  DatasetManifest manifest;
};

/// Covariate columns then one target column. String class labels are
/// mapped through the manifest's label list, or sorted order when absent.
inline LoadedDataset load_dataset(const fs::path& csv, std::optional<DatasetManifest> manifest = std::nullopt) {
  require(fs::exists(csv), ErrorCode::Io, "no such file: " + csv.string());
  if (!manifest) {
    const auto sidecar = find_sidecar(csv);
    require(sidecar.has_value(), ErrorCode::Io, "no manifest next to " + csv.string() +
                                                    " (expected " + csv.string() + ".json)");
    manifest = manifest_from_json(Json::parse(read_file(*sidecar)));
  }
  const CsvTable t = read_csv(csv);
  require(!t.rows.empty(), ErrorCode::EmptyDataset, csv.string() + " has no data rows");
  const std::size_t width = t.rows.front().size();
  require(width >= 2, ErrorCode::EmptyDataset, csv.string() + " needs covariates and a target");

  LoadedDataset out;
  out.manifest = *manifest;
  Dataset& d = out.data;
  d.task = manifest->task;
  d.covariates.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(width - 1));
  d.targets.resize(static_cast<Index>(t.rows.size()));

  std::map<std::string, int> label_index;
  for (std::size_t c = 0; c < manifest->labels.size(); ++c) label_index[manifest->labels[c]] = static_cast<int>(c);
  if (d.task == Task::Classification && manifest->labels.empty()) {
    bool all_numeric = true;
    for (const auto& r : t.rows) all_numeric = all_numeric && r.size() == width && parse_double(r.back());
    if (!all_numeric) {
      std::vector<std::string> names;
      for (const auto& r : t.rows) names.push_back(r.back());
      std::sort(names.begin(), names.end());
      names.erase(std::unique(names.begin(), names.end()), names.end());
      for (std::size_t c = 0; c < names.size(); ++c) label_index[names[c]] = static_cast<int>(c);
      out.manifest.labels = names;
      if (out.manifest.classes == 0) out.manifest.classes = static_cast<int>(names.size());
    }
  }
  d.class_count = out.manifest.classes;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    require(row.size() == width, ErrorCode::DimensionMismatch,
            csv.string() + ": row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                " fields, expected " + std::to_string(width));
    for (std::size_t c = 0; c + 1 < width; ++c) {
      const auto v = parse_double(row[c]);
      require(v.has_value(), ErrorCode::NonFinite,
              csv.string() + ": row " + std::to_string(r + 1) + " column " + std::to_string(c + 1) +
                  " is not a number ('" + row[c] + "')");
      d.covariates(static_cast<Index>(r), static_cast<Index>(c)) = *v;
    }
    const std::string& y = row.back();
    if (!label_index.empty()) {
      const auto it = label_index.find(y);
      require(it != label_index.end(), ErrorCode::BadLabel, csv.string() + ": unknown label '" + y + "'");
      d.targets(static_cast<Index>(r)) = it->second;
    } else {
      const auto v = parse_double(y);
      require(v.has_value(), ErrorCode::NonFinite, csv.string() + ": target '" + y + "' is not a number");
      d.targets(static_cast<Index>(r)) = *v;
    }
  }
  out.data = validate_dataset(std::move(out.data));
  return out;
}

/// Covariates only: every column when the width is `dim`, else all but the last.
inline Matrix load_covariates(const fs::path& csv, Index dim) {
  require(fs::exists(csv), ErrorCode::Io, "no such file: " + csv.string());
  const CsvTable t = read_csv(csv);
  require(!t.rows.empty(), ErrorCode::EmptyDataset, csv.string() + " has no data rows");
  const auto width = static_cast<Index>(t.rows.front().size());
  require(width == dim || width == dim + 1, ErrorCode::DimensionMismatch,
          csv.string() + " has " + std::to_string(width) + " columns, expected " + std::to_string(dim));
  Matrix x(static_cast<Index>(t.rows.size()), dim);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    require(static_cast<Index>(t.rows[r].size()) == width, ErrorCode::DimensionMismatch,
            csv.string() + ": ragged row " + std::to_string(r + 1));
    for (Index c = 0; c < dim; ++c) {
      const auto v = parse_double(t.rows[r][static_cast<std::size_t>(c)]);
      require(v && std::isfinite(*v), ErrorCode::NonFinite, csv.string() + ": bad number");
      x(static_cast<Index>(r), c) = *v;
    }
  }
  return x;
}

inline std::string dataset_to_csv(const Dataset& d) {
  std::string s;
  for (Index j = 0; j < d.dim(); ++j) s += "x" + std::to_string(j) + ",";
  s += "y\n";
  for (Index i = 0; i < d.size(); ++i) {
    for (Index j = 0; j < d.dim(); ++j) s += format_double(d.covariates(i, j)) + ",";
    s += format_double(d.targets(i)) + "\n";
  }
  return s;
}

inline std::string importance_to_csv(const ImportanceVector& w) {
  std::string s = "w\n";
  for (Index i = 0; i < w.size(); ++i) s += format_double(w.weights(i)) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// JSON forms

inline Json learner_to_json(const LearnerConfig& c) {
  return {{"lambda", c.lambda}, {"grad_tol", c.grad_tol}, {"max_iter", c.max_iter}};
}

inline LearnerConfig learner_from_json(const Json& j, LearnerConfig c = {}) {
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("grad_tol")) c.grad_tol = j.at("grad_tol").get<double>();
  if (j.contains("max_iter")) c.max_iter = j.at("max_iter").get<int>();
  return c;
}

inline Json spec_to_json(const EstimatorSpec& s) {
  Json j{{"method", to_string(s.method)},
         {"phi", to_string(s.phi_mode)},
         {"kernel", {{"family", to_string(s.kernel.family)}, {"bandwidth", s.kernel.bandwidth}}},
         {"phi_learner", learner_to_json(s.phi_learner)},
         {"standardize", s.standardize},
         {"B", s.upper_bound},
         {"partitions", s.partitions},
         {"ensemble_axis", to_string(s.ensemble_axis)},
         {"qp_tol", s.qp_tol},
         {"qp_max_iter", s.qp_max_iter},
         {"kernel_memory_budget", s.kernel_memory_budget},
         {"basis_count", s.basis_count},
         {"sigma_grid", s.sigma_grid},
         {"kliep_folds", s.kliep_folds},
         {"kliep_tol", s.kliep_tol},
         {"kliep_max_iter", s.kliep_max_iter},
         {"lambda_disc", s.lambda_disc}};
  j["epsilon"] = s.slack ? Json(*s.slack) : Json(nullptr);
  return j;
}

/// Missing fields take the per-method defaults.
inline EstimatorSpec spec_from_json(const Json& j) {
  EstimatorSpec s = EstimatorSpec::defaults(parse_method(j.at("method").get<std::string>()));
  if (j.contains("phi")) s.phi_mode = parse_phi_mode(j.at("phi").get<std::string>());
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    if (k.contains("family")) s.kernel.family = parse_kernel_family(k.at("family").get<std::string>());
    if (k.contains("bandwidth")) s.kernel.bandwidth = k.at("bandwidth").get<double>();
  }
  if (j.contains("phi_learner")) s.phi_learner = learner_from_json(j.at("phi_learner"));
  if (j.contains("standardize")) s.standardize = j.at("standardize").get<bool>();
  if (j.contains("B")) s.upper_bound = j.at("B").get<double>();
  if (j.contains("epsilon") && !j.at("epsilon").is_null()) s.slack = j.at("epsilon").get<double>();
  if (j.contains("partitions")) s.partitions = j.at("partitions").get<int>();
  if (j.contains("ensemble_axis")) s.ensemble_axis = parse_ensemble_axis(j.at("ensemble_axis").get<std::string>());
  if (j.contains("qp_tol")) s.qp_tol = j.at("qp_tol").get<double>();
  if (j.contains("qp_max_iter")) s.qp_max_iter = j.at("qp_max_iter").get<int>();
  if (j.contains("kernel_memory_budget")) s.kernel_memory_budget = j.at("kernel_memory_budget").get<double>();
  if (j.contains("basis_count")) s.basis_count = j.at("basis_count").get<int>();
  if (j.contains("sigma_grid")) s.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
  if (j.contains("kliep_folds")) s.kliep_folds = j.at("kliep_folds").get<int>();
  if (j.contains("kliep_tol")) s.kliep_tol = j.at("kliep_tol").get<double>();
  if (j.contains("kliep_max_iter")) s.kliep_max_iter = j.at("kliep_max_iter").get<int>();
  if (j.contains("lambda_disc")) s.lambda_disc = j.at("lambda_disc").get<double>();
  s.validate();
  return s;
}

inline Json model_to_json(const LinearModel& m) {
  Json w = Json::array();
  for (Index i = 0; i < m.weights.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < m.weights.cols(); ++k) row.push_back(m.weights(i, k));
    w.push_back(row);
  }
  std::vector<double> bias(m.bias.data(), m.bias.data() + m.bias.size());
  return {{"kind", to_string(m.kind)}, {"lambda", m.lambda}, {"weights", w}, {"bias", bias}};
}

inline LinearModel model_from_json(const Json& j) {
  LinearModel m;
  const auto kind = j.at("kind").get<std::string>();
  require(kind == "ridge" || kind == "logistic", ErrorCode::InvalidArgument, "unknown model kind " + kind);
  m.kind = kind == "ridge" ? ModelKind::Ridge : ModelKind::Logistic;
  m.lambda = j.at("lambda").get<double>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  m.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Index>(bias.size()));
  m.weights.resize(static_cast<Index>(rows.size()), static_cast<Index>(bias.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == bias.size(), ErrorCode::DimensionMismatch, "ragged weight matrix");
    for (std::size_t k = 0; k < bias.size(); ++k)
      m.weights(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  }
  return m;
}

}  // namespace covshift
