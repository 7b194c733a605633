#pragma once

// Shared domain types: datasets, importance vectors, errors and the
// deterministic random stream every randomized routine takes explicitly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace covshift {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorCode {
  NonFinite,
  EmptyDataset,
  BadLabel,
  DimensionMismatch,
  SingularSystem,
  DegenerateClass,
  NotConverged,
  NonPsd,
  Infeasible,
  DegenerateBasis,
  PartitionTooFine,
  MemoryBudget,
  ZeroDensity,
  InfeasibleConstraints,
  ClassMissingInPool,
  DegenerateSplit,
  FoldTooSmall,
  DegenerateWeights,
  UnsupportedK,
  InsufficientData,
  InvalidArgument,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::NonPsd: return "NonPsd";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::DegenerateBasis: return "DegenerateBasis";
    case ErrorCode::PartitionTooFine: return "PartitionTooFine";
    case ErrorCode::MemoryBudget: return "MemoryBudget";
    case ErrorCode::ZeroDensity: return "ZeroDensity";
    case ErrorCode::InfeasibleConstraints: return "InfeasibleConstraints";
    case ErrorCode::ClassMissingInPool: return "ClassMissingInPool";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::FoldTooSmall: return "FoldTooSmall";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::UnsupportedK: return "UnsupportedK";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Solver-side failures, as opposed to bad input data.
inline bool is_solver_error(ErrorCode code) {
  return code == ErrorCode::NotConverged || code == ErrorCode::NonPsd ||
         code == ErrorCode::Infeasible || code == ErrorCode::DegenerateBasis ||
         code == ErrorCode::SingularSystem || code == ErrorCode::MemoryBudget;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

enum class Task { Classification, Regression };

inline std::string_view to_string(Task task) {
  return task == Task::Classification ? "classification" : "regression";
}

inline Task parse_task(std::string_view s) {
  if (s == "classification") return Task::Classification;
  if (s == "regression") return Task::Regression;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

/// Covariates plus targets. Classification labels are dense integers
/// 0..class_count-1 stored as doubles.
struct Dataset {
  Matrix covariates;
  Vector targets;
  Task task = Task::Regression;
  int class_count = 0;

  Index size() const { return covariates.rows(); }
  Index dim() const { return covariates.cols(); }

  int label(Index i) const { return static_cast<int>(targets(i)); }

  /// Rows picked by index, in the given order (duplicates allowed).
  Dataset subset(const std::vector<Index>& rows) const {
    Dataset out;
    out.task = task;
    out.class_count = class_count;
    out.covariates.resize(static_cast<Index>(rows.size()), dim());
    out.targets.resize(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.covariates.row(static_cast<Index>(r)) = covariates.row(rows[r]);
      out.targets(static_cast<Index>(r)) = targets(rows[r]);
    }
    return out;
  }
};

inline Dataset validate_dataset(Dataset raw) {
  require(raw.size() >= 1 && raw.dim() >= 1, ErrorCode::EmptyDataset,
          "dataset needs at least one row and one column");
  require(raw.targets.size() == raw.size(), ErrorCode::DimensionMismatch,
          "target count differs from row count");
  require(raw.covariates.allFinite(), ErrorCode::NonFinite, "covariates contain NaN or inf");
  require(raw.targets.allFinite(), ErrorCode::NonFinite, "targets contain NaN or inf");
  if (raw.task == Task::Classification) {
    require(raw.class_count >= 1, ErrorCode::BadLabel, "class count must be positive");
    for (Index i = 0; i < raw.size(); ++i) {
      const double y = raw.targets(i);
      require(y >= 0 && y < raw.class_count && y == std::floor(y), ErrorCode::BadLabel,
              "label " + std::to_string(y) + " outside 0.." +
                  std::to_string(raw.class_count - 1));
    }
  }
  return raw;
}

/// One nonnegative weight per training example.
struct ImportanceVector {
  Vector weights;

  Index size() const { return weights.size(); }
  double mean() const { return weights.size() ? weights.mean() : 0.0; }
};

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64 finalizer, used for seeding and for deriving child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// xoshiro256** with every derived distribution written out here, so the
/// output sequence does not depend on the standard library's distributions.
class RngStream {
 public:
  static constexpr std::string_view algorithm = "xoshiro256**/splitmix64";

  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s = mix64(s);
      word = s;
    }
  }

  std::uint64_t seed() const { return seed_; }

  /// Independent stream keyed by a tag; does not advance this stream.
  RngStream child(std::uint64_t tag) const { return RngStream(mix64(seed_ ^ mix64(tag + 1))); }
  RngStream child(std::string_view tag) const { return child(hash_string(tag)); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1).
  double uniform_open() {
    double u;
    do { u = uniform(); } while (u == 0.0);
    return u;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do { x = next_u64(); } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform_open()); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<Index> permutation(Index n) {
    std::vector<Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), Index{0});
    shuffle(p);
    return p;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Standardization

struct ScalingRecord {
  Vector mean;
  Vector scale;
  std::vector<bool> unit_scale;  // column had zero train variance

  Matrix apply(const Matrix& x) const {
    require(x.cols() == mean.size(), ErrorCode::DimensionMismatch,
            "scaling record has " + std::to_string(mean.size()) + " columns, input has " +
                std::to_string(x.cols()));
    Matrix out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j)
      out.col(j) = (x.col(j).array() - mean(j)) / scale(j);
    return out;
  }

  Matrix invert(const Matrix& z) const {
    require(z.cols() == mean.size(), ErrorCode::DimensionMismatch, "scaling record width");
    Matrix out(z.rows(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) out.col(j) = z.col(j).array() * scale(j) + mean(j);
    return out;
  }
};

/// Column z-scores fit on `train` (population standard deviation).
inline ScalingRecord fit_scaling(const Matrix& train) {
  require(train.rows() >= 1, ErrorCode::EmptyDataset, "cannot fit scaling on zero rows");
  ScalingRecord rec;
  const Index d = train.cols();
  rec.mean.resize(d);
  rec.scale.resize(d);
  rec.unit_scale.assign(static_cast<std::size_t>(d), false);
  for (Index j = 0; j < d; ++j) {
    const double mu = train.col(j).mean();
    const double var = (train.col(j).array() - mu).square().mean();
    const double sd = std::sqrt(var);
    rec.mean(j) = mu;
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) {
      rec.scale(j) = 1.0;
      rec.unit_scale[static_cast<std::size_t>(j)] = true;
    } else {
      rec.scale(j) = sd;
    }
  }
  return rec;
}

struct Standardized {
  Matrix train;
  Matrix test;
  ScalingRecord record;
};

inline Standardized standardize(const Matrix& train, const Matrix& test) {
  require(train.cols() == test.cols(), ErrorCode::DimensionMismatch,
          "train has " + std::to_string(train.cols()) + " columns, test has " +
              std::to_string(test.cols()));
  ScalingRecord rec = fit_scaling(train);
  Matrix tr = rec.apply(train);
  Matrix te = rec.apply(test);
  return {std::move(tr), std::move(te), std::move(rec)};
}

struct StandardizedDatasets {
  Dataset train;
  Dataset test;
  ScalingRecord record;
};

inline StandardizedDatasets standardize(const Dataset& train, const Dataset& test) {
  auto s = standardize(train.covariates, test.covariates);
  Dataset tr = train;
  Dataset te = test;
  tr.covariates = std::move(s.train);
  te.covariates = std::move(s.test);
  return {std::move(tr), std::move(te), std::move(s.record)};
}

/// Train/test pair sharing shape, with the injection parameters that made it.
struct SplitProvenance {
  std::uint64_t seed = 0;
  std::vector<double> prevalences;  // classification
  std::vector<long> allocation;     // classification
  double gamma = 0.0;               // regression
};

struct SplitPair {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  SplitProvenance provenance;
};

}  // namespace covshift
