#pragma once

// Batch experiments behind the command-line tool: shift injection to disk,
// resumable evaluation grids, rank tables and the one-relevant-covariate
// toy problem.

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"
#include "covshift/evaluate.hpp"
#include "covshift/inject.hpp"
#include "covshift/io.hpp"
#include "covshift/stats.hpp"

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace covshift {

struct DatasetEntry {
  std::string name;
  fs::path path;
  std::optional<DatasetManifest> manifest;  // else the sidecar next to the CSV
};

/// Explicit train/test files evaluated under every seed as variant 0.
struct PairEntry {
  std::string name;
  fs::path train;
  fs::path test;
  std::optional<DatasetManifest> manifest;
};

struct ExperimentConfig {
  std::vector<DatasetEntry> datasets;
  std::vector<PairEntry> pairs;
  std::vector<std::uint64_t> seeds{2032, 2033, 2034, 2035, 2036};
  int variants = 20;
  double test_fraction = 0.33;
  std::optional<double> min_separation;  // default 1/(10 m)
  std::vector<double> gammas{5.0, -5.0};  // cycled over regression variants
  std::vector<EstimatorSpec> estimators;  // one entry per (method, phi)
  LearnerConfig learner;
  std::optional<LearnerConfig> phi_learner;  // defaults to `learner`
  int folds = 10;
  bool standardize = true;
  fs::path output = "covshift-out";
  int workers = 1;

  static std::vector<EstimatorSpec> default_estimators(const std::vector<Method>& methods,
                                                       const std::vector<PhiMode>& phis) {
    std::vector<EstimatorSpec> out;
    for (Method m : methods)
      for (PhiMode p : phis) out.push_back(EstimatorSpec::defaults(m, p));
    return out;
  }

  ExperimentConfig() {
    estimators = default_estimators({Method::LR, Method::KMM, Method::EKMM, Method::KDE, Method::KLIEP},
                                    {PhiMode::Covariates, PhiMode::Predictions, PhiMode::Both});
  }

  /// Specs as actually run: learner and standardization settings applied.
  std::vector<EstimatorSpec> resolved_estimators() const {
    std::vector<EstimatorSpec> out = estimators;
    for (auto& s : out) {
      s.phi_learner = phi_learner.value_or(learner);
      s.standardize = standardize;
    }
    return out;
  }

  void validate() const {
    require(!seeds.empty(), ErrorCode::InvalidArgument, "config needs at least one seed");
    require(!estimators.empty(), ErrorCode::InvalidArgument, "config needs at least one estimator");
    require(variants >= 1, ErrorCode::InvalidArgument, "variants must be >= 1");
    require(workers >= 1, ErrorCode::InvalidArgument, "workers must be >= 1");
    require(!gammas.empty(), ErrorCode::InvalidArgument, "gamma list is empty");
    std::set<std::string> names;
    for (const auto& d : datasets)
      require(names.insert(d.name).second, ErrorCode::InvalidArgument, "duplicate dataset name " + d.name);
    for (const auto& p : pairs)
      require(names.insert(p.name).second, ErrorCode::InvalidArgument, "duplicate dataset name " + p.name);
    std::set<std::string> specs;
    for (const auto& s : estimators)
      require(specs.insert(s.name()).second, ErrorCode::InvalidArgument, "duplicate estimator " + s.name());
  }
};

inline std::optional<DatasetManifest> optional_manifest(const Json& j) {
  if (!j.contains("task")) return std::nullopt;
  return manifest_from_json(j);
}

/// Relative paths are resolved against `base` (the config file's folder).
inline ExperimentConfig config_from_json(const Json& j, const fs::path& base = {}) {
  ExperimentConfig c;
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  if (j.contains("datasets"))
    for (const auto& d : j.at("datasets")) {
      DatasetEntry e;
      e.path = resolve(d.at("path").get<std::string>());
      e.name = d.contains("name") ? d.at("name").get<std::string>() : e.path.stem().string();
      e.manifest = optional_manifest(d);
      c.datasets.push_back(std::move(e));
    }
  if (j.contains("pairs"))
    for (const auto& d : j.at("pairs")) {
      PairEntry e;
      e.name = d.at("name").get<std::string>();
      e.train = resolve(d.at("train").get<std::string>());
      e.test = resolve(d.at("test").get<std::string>());
      e.manifest = optional_manifest(d);
      c.pairs.push_back(std::move(e));
    }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("variants")) c.variants = j.at("variants").get<int>();
  if (j.contains("test_fraction")) c.test_fraction = j.at("test_fraction").get<double>();
  if (j.contains("d_min") && !j.at("d_min").is_null()) c.min_separation = j.at("d_min").get<double>();
  if (j.contains("gammas")) c.gammas = j.at("gammas").get<std::vector<double>>();
  if (j.contains("learner")) c.learner = learner_from_json(j.at("learner"));
  if (j.contains("phi_learner")) c.phi_learner = learner_from_json(j.at("phi_learner"));
  if (j.contains("folds")) c.folds = j.at("folds").get<int>();
  if (j.contains("standardize")) c.standardize = j.at("standardize").get<bool>();
  if (j.contains("output")) c.output = resolve(j.at("output").get<std::string>());
  if (j.contains("workers")) c.workers = j.at("workers").get<int>();

  std::vector<PhiMode> phis{PhiMode::Covariates, PhiMode::Predictions, PhiMode::Both};
  if (j.contains("phi_modes")) {
    phis.clear();
    for (const auto& p : j.at("phi_modes")) phis.push_back(parse_phi_mode(p.get<std::string>()));
  }
  if (j.contains("estimators")) {
    c.estimators.clear();
    for (const auto& e : j.at("estimators")) {
      if (e.contains("phi")) {
        c.estimators.push_back(spec_from_json(e));
      } else {
        for (PhiMode p : phis) {
          Json with_phi = e;
          with_phi["phi"] = std::string(to_string(p));
          c.estimators.push_back(spec_from_json(with_phi));
        }
      }
    }
  } else {
    std::vector<Method> methods{Method::LR, Method::KMM, Method::EKMM, Method::KDE, Method::KLIEP};
    if (j.contains("methods")) {
      methods.clear();
      for (const auto& m : j.at("methods")) methods.push_back(parse_method(m.get<std::string>()));
    }
    c.estimators = ExperimentConfig::default_estimators(methods, phis);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  require(fs::exists(path), ErrorCode::Io, "no such config: " + path.string());
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// COVSHIFT_WORKERS, when set to a positive integer, replaces the
/// configured worker count.
inline int resolve_workers(int configured) {
  if (const char* env = std::getenv("COVSHIFT_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1, configured);
}

/// Runs f(0..count-1) on `workers` threads; the first exception is rethrown.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto body = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// inject

inline fs::path split_dir(const ExperimentConfig& c, const std::string& dataset, std::uint64_t seed) {
  return c.output / "splits" / dataset / ("seed_" + std::to_string(seed));
}

inline RngStream split_stream(std::uint64_t seed, const std::string& dataset) {
  return RngStream(seed).child("inject").child(dataset);
}

struct InjectSummary {
  int train_files = 0;
  int test_files = 0;
};

inline InjectSummary cmd_inject(const ExperimentConfig& c) {
  c.validate();
  InjectSummary summary;
  for (const auto& entry : c.datasets) {
    const LoadedDataset loaded = load_dataset(entry.path, entry.manifest);
    const Dataset& source = loaded.data;
    for (std::uint64_t seed : c.seeds) {
      const fs::path dir = split_dir(c, entry.name, seed);
      const RngStream rng = split_stream(seed, entry.name);
      Json manifest{{"dataset", entry.name},
                    {"source", entry.path.string()},
                    {"seed", seed},
                    {"rng", std::string(RngStream::algorithm)},
                    {"task", to_string(source.task)}};
      Json variants = Json::array();
      if (source.task == Task::Classification) {
        const double dmin = c.min_separation.value_or(default_min_separation(source.class_count));
        const auto inj = inject_classification(source, c.test_fraction, c.variants, dmin, rng);
        manifest["classes"] = source.class_count;
        manifest["test_fraction"] = c.test_fraction;
        manifest["d_min"] = dmin;
        manifest["pool_size"] = inj.pool.size();
        write_file(dir / "train.csv", dataset_to_csv(inj.train));
        ++summary.train_files;
        for (std::size_t k = 0; k < inj.variants.size(); ++k) {
          const auto& v = inj.variants[k];
          const std::string test_name = "test_" + std::to_string(k) + ".csv";
          write_file(dir / test_name, dataset_to_csv(v.test));
          ++summary.test_files;
          variants.push_back({{"variant", k},
                              {"train", "train.csv"},
                              {"test", test_name},
                              {"prevalences", v.prevalence.probabilities},
                              {"allocation", v.allocation}});
        }
      } else {
        manifest["test_fraction"] = c.test_fraction;
        for (int k = 0; k < c.variants; ++k) {
          SigmoidSplitConfig sc;
          sc.gamma = c.gammas[static_cast<std::size_t>(k) % c.gammas.size()];
          sc.test_fraction = c.test_fraction;
          const auto inj = inject_regression(source, sc, rng.child(static_cast<std::uint64_t>(k)));
          const std::string train_name = "train_" + std::to_string(k) + ".csv";
          const std::string test_name = "test_" + std::to_string(k) + ".csv";
          write_file(dir / train_name, dataset_to_csv(inj.pair.train));
          write_file(dir / test_name, dataset_to_csv(inj.pair.test));
          ++summary.train_files;
          ++summary.test_files;
          variants.push_back({{"variant", k},
                              {"train", train_name},
                              {"test", test_name},
                              {"gamma", sc.gamma},
                              {"train_size", inj.pair.train.size()},
                              {"test_size", inj.pair.test.size()}});
        }
      }
      manifest["variants"] = variants;
      write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// run

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "dataset", "method", "phi_mode", "seed", "variant", "status", "distance_weighted",
      "distance_unweighted", "actual_error", "estimate_weighted", "estimate_unweighted", "message"};
  return cols;
}

inline std::string report_header() {
  std::string h;
  for (const auto& c : report_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

struct ReportRow {
  std::string dataset;
  std::string method;
  std::string phi_mode;
  std::uint64_t seed = 0;
  int variant = 0;
  bool ok = false;
  EvalResult result;
  std::string message;

  using Key = std::tuple<std::string, std::string, std::string, std::uint64_t, int>;
  Key key() const { return {dataset, method, phi_mode, seed, variant}; }

  std::string to_csv() const {
    std::string msg = message;
    for (char& ch : msg)
      if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ' ';
    std::string s = dataset + "," + method + "," + phi_mode + "," + std::to_string(seed) + "," +
                    std::to_string(variant) + "," + (ok ? "ok" : "failed") + ",";
    if (ok)
      s += format_double(result.distance_weighted) + "," + format_double(result.distance_unweighted) +
           "," + format_double(result.actual_error) + "," + format_double(result.estimate_weighted) +
           "," + format_double(result.estimate_unweighted);
    else
      s += ",,,,";
    return s + "," + msg;
  }
};

inline ReportRow parse_report_row(const std::vector<std::string>& f) {
  require(f.size() == report_columns().size(), ErrorCode::InvalidArgument,
          "report row has " + std::to_string(f.size()) + " fields");
  ReportRow r;
  r.dataset = f[0];
  r.method = f[1];
  r.phi_mode = f[2];
  r.seed = std::stoull(f[3]);
  r.variant = std::stoi(f[4]);
  r.ok = f[5] == "ok";
  if (r.ok) {
    const auto num = [&](std::size_t i) {
      const auto v = parse_double(f[i]);
      require(v.has_value(), ErrorCode::InvalidArgument, "bad number '" + f[i] + "' in report");
      return *v;
    };
    r.result.distance_weighted = num(6);
    r.result.distance_unweighted = num(7);
    r.result.actual_error = num(8);
    r.result.estimate_weighted = num(9);
    r.result.estimate_unweighted = num(10);
  }
  r.message = f[11];
  return r;
}

inline std::vector<ReportRow> read_report(const fs::path& path) {
  std::vector<ReportRow> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream in(read_file(path));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      require(line == report_header(), ErrorCode::InvalidArgument,
              path.string() + " does not carry the report header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    // A run killed mid-write can leave a truncated last line.
    const auto fields = split_csv_line(line);
    if (fields.size() != report_columns().size()) continue;
    rows.push_back(parse_report_row(fields));
  }
  return rows;
}

struct SplitRef {
  std::string dataset;
  std::uint64_t seed = 0;
  int variant = 0;
  fs::path train;
  fs::path test;
  DatasetManifest manifest;
};

inline std::vector<SplitRef> enumerate_splits(const ExperimentConfig& c) {
  std::vector<SplitRef> out;
  for (const auto& entry : c.datasets)
    for (std::uint64_t seed : c.seeds) {
      const fs::path dir = split_dir(c, entry.name, seed);
      const fs::path mpath = dir / "manifest.json";
      require(fs::exists(mpath), ErrorCode::Io,
              "missing " + mpath.string() + "; run the inject command first");
      const Json m = Json::parse(read_file(mpath));
      DatasetManifest dm = manifest_from_json(m);
      for (const auto& v : m.at("variants")) {
        SplitRef s;
        s.dataset = entry.name;
        s.seed = seed;
        s.variant = v.at("variant").get<int>();
        s.train = dir / v.at("train").get<std::string>();
        s.test = dir / v.at("test").get<std::string>();
        s.manifest = dm;
        out.push_back(std::move(s));
      }
    }
  for (const auto& p : c.pairs) {
    std::optional<DatasetManifest> dm = p.manifest;
    if (!dm) {
      const auto sidecar = find_sidecar(p.train);
      require(sidecar.has_value(), ErrorCode::Io, "no manifest for pair " + p.name);
      dm = manifest_from_json(Json::parse(read_file(*sidecar)));
    }
    for (std::uint64_t seed : c.seeds) out.push_back({p.name, seed, 0, p.train, p.test, *dm});
  }
  return out;
}

inline RngStream pair_stream(const SplitRef& s) {
  return RngStream(s.seed).child("evaluate").child(s.dataset).child(static_cast<std::uint64_t>(s.variant));
}

/// Every spec on one split. Per-example CV errors and the actual error are
/// computed once and shared across specs.
inline std::vector<ReportRow> evaluate_split(const SplitRef& split, const std::vector<EstimatorSpec>& specs,
                                             const EvaluationConfig& eval) {
  std::vector<ReportRow> rows;
  for (const auto& spec : specs) {
    ReportRow r;
    r.dataset = split.dataset;
    r.method = std::string(to_string(spec.method));
    r.phi_mode = std::string(to_string(spec.phi_mode));
    r.seed = split.seed;
    r.variant = split.variant;
    rows.push_back(std::move(r));
  }
  const auto fail_all = [&](const std::string& what) {
    for (auto& r : rows) {
      r.ok = false;
      r.message = what;
    }
    return rows;
  };

  SplitPair pair;
  Vector ee;
  double actual = 0.0;
  const RngStream rng = pair_stream(split);
  try {
    pair.train = load_dataset(split.train, split.manifest).data;
    const Dataset test = load_dataset(split.test, split.manifest).data;
    pair.test = test;
    pair.seed = split.seed;
    RngStream fold_rng = rng.child("folds");
    const auto folds = assign_folds(pair.train, eval.folds, fold_rng);
    ee = cross_validated_errors(pair.train, folds, eval.folds, eval.learner);
    actual = actual_error(pair.train, pair.test, eval.learner);
  } catch (const std::exception& e) {
    return fail_all(e.what());
  }

  for (std::size_t s = 0; s < specs.size(); ++s) {
    try {
      const ImportanceVector w = estimate(specs[s], pair.train, pair.test.covariates,
                                          importance_stream(rng, specs[s]));
      rows[s].result = make_result(actual, weighted_estimate(ee, w, eval.folds));
      rows[s].ok = true;
    } catch (const std::exception& e) {
      rows[s].ok = false;
      rows[s].message = e.what();
    }
  }
  return rows;
}

struct RunSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  fs::path report;
};

/// Evaluates every (split, estimator) cell missing from the report.
/// Finished rows are appended as they complete; at the end the report is
/// rewritten in canonical cell order, so partial and full runs converge to
/// the same bytes. `split_limit` stops after that many splits (testing
/// interrupted runs).
inline RunSummary cmd_run(const ExperimentConfig& c, std::optional<std::size_t> split_limit = std::nullopt) {
  c.validate();
  const auto specs = c.resolved_estimators();
  const auto splits = enumerate_splits(c);
  RunSummary summary;
  summary.report = c.output / "report.csv";

  auto existing = read_report(summary.report);
  std::set<ReportRow::Key> done;
  for (const auto& r : existing) done.insert(r.key());

  struct Unit {
    std::size_t split;
    std::vector<EstimatorSpec> specs;
  };
  std::vector<Unit> units;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    Unit u{i, {}};
    for (const auto& s : specs) {
      const ReportRow::Key key{splits[i].dataset, std::string(to_string(s.method)),
                               std::string(to_string(s.phi_mode)), splits[i].seed, splits[i].variant};
      if (done.count(key)) ++summary.skipped;
      else u.specs.push_back(s);
    }
    if (!u.specs.empty()) units.push_back(std::move(u));
  }
  if (split_limit && units.size() > *split_limit) units.resize(*split_limit);

  fs::create_directories(c.output);
  {
    // Rewrite the surviving rows (drops a torn trailing line).
    std::string content = report_header() + "\n";
    for (const auto& r : existing) content += r.to_csv() + "\n";
    write_file(summary.report, content);
  }

  std::mutex append_mutex;
  std::ofstream appender(summary.report, std::ios::app | std::ios::binary);
  require(static_cast<bool>(appender), ErrorCode::Io, "cannot append to " + summary.report.string());
  std::vector<std::vector<ReportRow>> results(units.size());
  const EvaluationConfig eval{c.learner, c.folds};

  parallel_for(units.size(), c.workers, [&](std::size_t u) {
    auto rows = evaluate_split(splits[units[u].split], units[u].specs, eval);
    std::lock_guard lock(append_mutex);
    for (const auto& r : rows) {
      appender << r.to_csv() << "\n";
      if (!r.ok)
        std::cerr << "failed: " << r.dataset << " " << r.method << "-" << r.phi_mode << " seed "
                  << r.seed << " variant " << r.variant << ": " << r.message << "\n";
    }
    appender.flush();
    results[u] = std::move(rows);
  });
  appender.close();

  for (const auto& rows : results)
    for (const auto& r : rows) {
      ++summary.computed;
      if (!r.ok) ++summary.failed;
      existing.push_back(r);
    }

  // Canonical order: config dataset order, seed order, variant, then spec order.
  std::map<std::string, std::size_t> dataset_rank, spec_rank;
  std::map<std::uint64_t, std::size_t> seed_rank;
  for (const auto& d : c.datasets) dataset_rank.emplace(d.name, dataset_rank.size());
  for (const auto& p : c.pairs) dataset_rank.emplace(p.name, dataset_rank.size());
  for (std::uint64_t s : c.seeds) seed_rank.emplace(s, seed_rank.size());
  for (const auto& s : specs) spec_rank.emplace(s.name(), spec_rank.size());
  const auto rank_of = [](const auto& map, const auto& key) {
    const auto it = map.find(key);
    return it == map.end() ? map.size() : it->second;
  };
  std::stable_sort(existing.begin(), existing.end(), [&](const ReportRow& a, const ReportRow& b) {
    const auto ka = std::make_tuple(rank_of(dataset_rank, a.dataset), a.dataset, rank_of(seed_rank, a.seed),
                                    a.seed, a.variant, rank_of(spec_rank, a.method + "-" + a.phi_mode),
                                    a.method, a.phi_mode);
    const auto kb = std::make_tuple(rank_of(dataset_rank, b.dataset), b.dataset, rank_of(seed_rank, b.seed),
                                    b.seed, b.variant, rank_of(spec_rank, b.method + "-" + b.phi_mode),
                                    b.method, b.phi_mode);
    return ka < kb;
  });
  std::string content = report_header() + "\n";
  for (const auto& r : existing) content += r.to_csv() + "\n";
  write_file(summary.report, content);
  return summary;
}

// ---------------------------------------------------------------------------
// rank

struct MethodRanking {
  std::string method;
  std::vector<std::string> phi_modes;
  RankTable table;  // datasets x phi modes, per-dataset mean of per-variant ranks
  FriedmanTest friedman;
  double critical_difference = 0.0;
  std::vector<bool> significant;
};

struct RankReport {
  std::vector<MethodRanking> methods;
  double alpha = 0.05;
};

/// Per method, ranks its phi variants by distance_weighted on every
/// (dataset, seed, variant) where all of them succeeded, then averages the
/// ranks per dataset.
inline RankReport rank_report(const std::vector<ReportRow>& rows, double alpha = 0.05) {
  std::vector<std::string> methods, datasets;
  const auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : rows) {
    add_unique(methods, r.method);
    add_unique(datasets, r.dataset);
  }
  require(datasets.size() >= 2, ErrorCode::InsufficientData,
          "ranking needs at least two datasets, report has " + std::to_string(datasets.size()));

  RankReport out;
  out.alpha = alpha;
  for (const auto& method : methods) {
    std::vector<std::string> phis;
    for (const char* p : {"C", "P", "CP"})
      for (const auto& r : rows)
        if (r.method == method && r.phi_mode == p) {
          phis.emplace_back(p);
          break;
        }
    if (phis.size() < 2) continue;

    using Cell = std::tuple<std::string, std::uint64_t, int>;
    std::map<Cell, std::map<std::string, double>> cells;
    for (const auto& r : rows)
      if (r.method == method && r.ok) cells[{r.dataset, r.seed, r.variant}][r.phi_mode] = r.result.distance_weighted;

    std::vector<std::string> used;
    std::vector<Vector> per_dataset;
    for (const auto& ds : datasets) {
      Vector sum = Vector::Zero(static_cast<Index>(phis.size()));
      int count = 0;
      for (const auto& [cell, by_phi] : cells) {
        if (std::get<0>(cell) != ds || by_phi.size() < phis.size()) continue;
        Vector scores(static_cast<Index>(phis.size()));
        bool complete = true;
        for (std::size_t p = 0; p < phis.size(); ++p) {
          const auto it = by_phi.find(phis[p]);
          complete = complete && it != by_phi.end();
          if (complete) scores(static_cast<Index>(p)) = it->second;
        }
        if (!complete) continue;
        sum += rank_row(scores, true);
        ++count;
      }
      if (count == 0) continue;
      used.push_back(ds);
      per_dataset.push_back(sum / count);
    }
    if (used.size() < 2) continue;

    MethodRanking mr;
    mr.method = method;
    mr.phi_modes = phis;
    mr.table.methods = phis;
    mr.table.datasets = used;
    mr.table.ranks.resize(static_cast<Index>(used.size()), static_cast<Index>(phis.size()));
    for (std::size_t i = 0; i < used.size(); ++i) mr.table.ranks.row(static_cast<Index>(i)) = per_dataset[i].transpose();
    mr.table.average_ranks = mr.table.ranks.colwise().mean().transpose();
    mr.friedman = friedman_statistic(mr.table);
    mr.critical_difference = nemenyi_cd(static_cast<int>(phis.size()), static_cast<int>(used.size()), alpha);
    mr.significant = significance_marks(mr.table, mr.critical_difference);
    out.methods.push_back(std::move(mr));
  }
  require(!out.methods.empty(), ErrorCode::InsufficientData,
          "no method has two phi modes completed on two datasets");
  return out;
}

inline std::string fixed(double x, int digits = 2) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << x;
  return ss.str();
}

/// method,dataset,rank_<phi>...,best
inline std::string rank_table_csv(const RankReport& rep) {
  std::string s = "method,dataset,rank_C,rank_P,rank_CP,best\n";
  for (const auto& m : rep.methods)
    for (Index i = 0; i < m.table.ranks.rows(); ++i) {
      s += m.method + "," + m.table.datasets[static_cast<std::size_t>(i)];
      const double best = m.table.ranks.row(i).minCoeff();
      std::string best_names;
      for (const char* p : {"C", "P", "CP"}) {
        const auto it = std::find(m.phi_modes.begin(), m.phi_modes.end(), p);
        s += ",";
        if (it == m.phi_modes.end()) continue;
        const double r = m.table.ranks(i, it - m.phi_modes.begin());
        s += format_double(r);
        if (r == best) best_names += (best_names.empty() ? "" : "|") + std::string(p);
      }
      s += "," + best_names + "\n";
    }
  return s;
}

inline std::string rank_summary_csv(const RankReport& rep) {
  std::string s = "method,phi_mode,average_rank,significantly_worse,chi_square,p_value,critical_difference\n";
  for (const auto& m : rep.methods)
    for (std::size_t p = 0; p < m.phi_modes.size(); ++p)
      s += m.method + "," + m.phi_modes[p] + "," + format_double(m.table.average_ranks(static_cast<Index>(p))) +
           "," + (m.significant[p] ? "1" : "0") + "," + format_double(m.friedman.chi_square) + "," +
           format_double(m.friedman.p_value) + "," + format_double(m.critical_difference) + "\n";
  return s;
}

/// Aligned text tables; '*' marks the best rank in each row, '+' a phi mode
/// whose average rank trails the best by more than the critical difference.
inline std::string rank_text(const RankReport& rep) {
  std::ostringstream out;
  for (const auto& m : rep.methods) {
    std::size_t width = 8;
    for (const auto& d : m.table.datasets) width = std::max(width, d.size() + 2);
    out << m.method << "\n" << std::left << std::setw(static_cast<int>(width)) << "dataset";
    for (const auto& p : m.phi_modes) out << std::right << std::setw(10) << (m.method + "-" + p);
    out << "\n";
    for (Index i = 0; i < m.table.ranks.rows(); ++i) {
      out << std::left << std::setw(static_cast<int>(width)) << m.table.datasets[static_cast<std::size_t>(i)];
      const double best = m.table.ranks.row(i).minCoeff();
      for (Index j = 0; j < m.table.ranks.cols(); ++j)
        out << std::right << std::setw(10) << (fixed(m.table.ranks(i, j)) + (m.table.ranks(i, j) == best ? "*" : " "));
      out << "\n";
    }
    out << std::left << std::setw(static_cast<int>(width)) << "average";
    for (Index j = 0; j < m.table.average_ranks.size(); ++j)
      out << std::right << std::setw(10)
          << (fixed(m.table.average_ranks(j)) + (m.significant[static_cast<std::size_t>(j)] ? "+" : " "));
    out << "\nFriedman chi2 = " << fixed(m.friedman.chi_square, 4) << ", p = " << fixed(m.friedman.p_value, 4)
        << "; Nemenyi CD (alpha = " << fixed(rep.alpha) << ", K = " << m.phi_modes.size()
        << ", N = " << m.table.datasets.size() << ") = " << fixed(m.critical_difference, 4) << "\n\n";
  }
  return out.str();
}

inline RankReport cmd_rank(const fs::path& report, const fs::path& out_dir, double alpha = 0.05) {
  require(fs::exists(report), ErrorCode::Io, "no such report: " + report.string());
  const RankReport rep = rank_report(read_report(report), alpha);
  write_file(out_dir / "rank.csv", rank_table_csv(rep));
  write_file(out_dir / "rank_summary.csv", rank_summary_csv(rep));
  write_file(out_dir / "rank.txt", rank_text(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// toy

struct ToyConfig {
  std::uint64_t seed = 2032;
  int n_train = 100;
  int n_test = 100;
  int noise_covariates = 4;
  double shift = 1.0;        // test mean of the relevant covariate
  double slope = 2.0;
  double target_noise = 0.1;
  Method method = Method::KLIEP;
  LearnerConfig learner;
};

struct ToyData {
  Dataset train;
  Dataset test;
};

/// Column 0 is the relevant covariate: N(0,1) in train, N(shift,1) in test.
inline ToyData make_toy(const ToyConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).child("toy-data");
  const auto draw = [&](int n, double mean) {
    Dataset d;
    d.task = Task::Regression;
    d.covariates.resize(n, 1 + cfg.noise_covariates);
    d.targets.resize(n);
    for (int i = 0; i < n; ++i) {
      d.covariates(i, 0) = rng.normal(mean, 1.0);
      for (int j = 0; j < cfg.noise_covariates; ++j) d.covariates(i, 1 + j) = rng.normal();
      d.targets(i) = cfg.slope * d.covariates(i, 0) + cfg.target_noise * rng.normal();
    }
    return d;
  };
  ToyData t;
  t.train = draw(cfg.n_train, 0.0);
  t.test = draw(cfg.n_test, cfg.shift);
  return t;
}

/// N(shift,1) / N(0,1) density ratio.
inline double toy_true_ratio(double x, double shift) { return std::exp(shift * x - 0.5 * shift * shift); }

inline double mean_squared_log_error(const Vector& estimated, const Vector& truth) {
  double s = 0.0;
  for (Index i = 0; i < estimated.size(); ++i) {
    const double e = std::log(std::max(estimated(i), 1e-12)) - std::log(truth(i));
    s += e * e;
  }
  return s / static_cast<double>(estimated.size());
}

struct ToyResult {
  Vector x_relevant;
  Vector w_true;
  Vector density_train;
  Vector density_test;
  Vector w_covariates;   // phi(x) = x
  Vector w_predictions;  // phi(x) = f(x)
  double msle_covariates = 0.0;
  double msle_predictions = 0.0;
};

inline ToyResult run_toy(const ToyConfig& cfg) {
  const ToyData data = make_toy(cfg);
  const RngStream rng = RngStream(cfg.seed).child("toy-estimate");
  ToyResult r;
  r.x_relevant = data.train.covariates.col(0);
  r.w_true = r.x_relevant.unaryExpr([&](double x) { return toy_true_ratio(x, cfg.shift); });

  EstimatorSpec spec_c = EstimatorSpec::defaults(cfg.method, PhiMode::Covariates);
  EstimatorSpec spec_p = EstimatorSpec::defaults(cfg.method, PhiMode::Predictions);
  spec_c.phi_learner = spec_p.phi_learner = cfg.learner;
  r.w_covariates = estimate(spec_c, data.train, data.test.covariates, rng.child("C")).weights;
  r.w_predictions = estimate(spec_p, data.train, data.test.covariates, rng.child("P")).weights;

  EstimatorSpec kde = EstimatorSpec::defaults(Method::KDE, PhiMode::Predictions);
  kde.phi_learner = cfg.learner;
  const auto features = prepare_features(kde, data.train, data.test.covariates);
  const auto densities = kde_fit(features.train, features.test, kde);
  r.density_train = densities.density_train;
  r.density_test = densities.density_test;

  r.msle_covariates = mean_squared_log_error(r.w_covariates, r.w_true);
  r.msle_predictions = mean_squared_log_error(r.w_predictions, r.w_true);
  return r;
}

inline std::string toy_csv(const ToyResult& r) {
  std::string s = "x_relevant,w_true,p_tr,p_te,w_phi_x,w_phi_fx\n";
  for (Index i = 0; i < r.x_relevant.size(); ++i)
    s += format_double(r.x_relevant(i)) + "," + format_double(r.w_true(i)) + "," +
         format_double(r.density_train(i)) + "," + format_double(r.density_test(i)) + "," +
         format_double(r.w_covariates(i)) + "," + format_double(r.w_predictions(i)) + "\n";
  return s;
}

inline ToyResult cmd_toy(const ToyConfig& cfg, const fs::path& out) {
  ToyResult r = run_toy(cfg);
  write_file(out, toy_csv(r));
  return r;
}

// ---------------------------------------------------------------------------
// estimate

inline ImportanceVector cmd_estimate(const fs::path& train_csv, const fs::path& test_csv,
                                     const EstimatorSpec& spec, std::uint64_t seed, const fs::path& out,
                                     std::optional<DatasetManifest> manifest = std::nullopt) {
  const LoadedDataset train = load_dataset(train_csv, manifest);
  const Matrix test = load_covariates(test_csv, train.data.dim());
  const ImportanceVector w = estimate(spec, train.data, test, RngStream(seed).child("estimate"));
  write_file(out, importance_to_csv(w));
  return w;
}

}  // namespace covshift
