#pragma once

// The feature map fed to every importance estimator: raw covariates,
// predictions of a model fit on the training split, or both side by side.

#include "covshift/core.hpp"
#include "covshift/learners.hpp"

#include <memory>
#include <optional>

namespace covshift {

enum class PhiMode { Covariates, Predictions, Both };

/// Suffix form used in reports: C, P, CP.
inline std::string_view to_string(PhiMode m) {
  switch (m) {
    case PhiMode::Covariates: return "C";
    case PhiMode::Predictions: return "P";
    case PhiMode::Both: return "CP";
  }
  return "?";
}

inline PhiMode parse_phi_mode(std::string_view s) {
  if (s == "C" || s == "-C") return PhiMode::Covariates;
  if (s == "P" || s == "-P") return PhiMode::Predictions;
  if (s == "CP" || s == "-CP") return PhiMode::Both;
  throw Error(ErrorCode::InvalidArgument, "unknown phi mode '" + std::string(s) + "'");
}

class PhiMapper {
 public:
  static PhiMapper identity(Index input_dim) { return PhiMapper(PhiMode::Covariates, input_dim, nullptr); }

  static PhiMapper with_model(PhiMode mode, LinearModel model) {
    require(mode != PhiMode::Covariates, ErrorCode::InvalidArgument,
            "identity mapper carries no model");
    const Index d = model.input_dim();
    return PhiMapper(mode, d, std::make_shared<const LinearModel>(std::move(model)));
  }

  PhiMode mode() const { return mode_; }
  Index input_dim() const { return input_dim_; }

  Index output_dim() const {
    switch (mode_) {
      case PhiMode::Covariates: return input_dim_;
      case PhiMode::Predictions: return model_->output_dim();
      case PhiMode::Both: return input_dim_ + model_->output_dim();
    }
    return 0;
  }

  /// Shared so that copies of a mapper refer to the same fitted model.
  const std::shared_ptr<const LinearModel>& model() const { return model_; }

  Matrix apply(const Matrix& x) const {
    require(x.cols() == input_dim_, ErrorCode::DimensionMismatch,
            "phi expects " + std::to_string(input_dim_) + " columns, got " +
                std::to_string(x.cols()));
    if (mode_ == PhiMode::Covariates) return x;
    const Matrix pred = predict_raw(*model_, x);
    if (mode_ == PhiMode::Predictions) return pred;
    Matrix out(x.rows(), x.cols() + pred.cols());
    out << x, pred;
    return out;
  }

 private:
  PhiMapper(PhiMode mode, Index input_dim, std::shared_ptr<const LinearModel> model)
      : mode_(mode), input_dim_(input_dim), model_(std::move(model)) {}

  PhiMode mode_;
  Index input_dim_;
  std::shared_ptr<const LinearModel> model_;
};

/// For P and CP the model is fit on the whole training split.
inline PhiMapper fit_phi(const Dataset& train, PhiMode mode, const LearnerConfig& learner) {
  if (mode == PhiMode::Covariates) return PhiMapper::identity(train.dim());
  return PhiMapper::with_model(mode, fit_learner(train, learner));
}

inline Matrix apply_phi(const PhiMapper& mapper, const Matrix& x) { return mapper.apply(x); }

}  // namespace covshift
