#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bayesod/detection_model.hpp"

namespace bayesod {

/// Raw detector output for one anchor across T stochastic runs.
template <typename Scalar>
struct AnchorPrediction {
  std::int64_t anchor_id = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 4> box_samples;  // T x 4
  std::vector<Matrix4<Scalar>> aleatoric_covs;            // T entries
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> logit_samples;  // T x K

  std::size_t run_count() const { return static_cast<std::size_t>(box_samples.rows()); }
  std::size_t category_count() const { return static_cast<std::size_t>(logit_samples.cols()); }
};

/// Per-anchor Gaussian box and categorical marginal.
template <typename Scalar>
struct AnchorBelief {
  std::int64_t anchor_id = 0;
  BoxGaussian<Scalar> box;
  CategoricalDist<Scalar> category;
};

template <typename Scalar>
struct BoxMoments {
  Vector4<Scalar> mean;
  Matrix4<Scalar> epistemic_cov;
};

template <typename Scalar>
void validate(const AnchorPrediction<Scalar>& p) {
  const auto t = p.box_samples.rows();
  if (t < 1) throw ValidationError("anchor prediction needs at least one run");
  if (p.logit_samples.rows() != t || static_cast<Eigen::Index>(p.aleatoric_covs.size()) != t)
    throw ValidationError("anchor prediction run counts disagree");
  if (p.logit_samples.cols() < 2) throw ValidationError("anchor prediction needs K >= 2 logits");
  if (!p.box_samples.allFinite()) throw ValidationError("non-finite box sample");
  if (!p.logit_samples.allFinite()) throw ValidationError("non-finite logit");
  for (const auto& c : p.aleatoric_covs) {
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9) * c.cwiseAbs().maxCoeff())
      throw ValidationError("aleatoric covariance is not symmetric");
    if (!is_positive_definite(c)) throw NumericalError("aleatoric covariance is not positive definite");
  }
}

/// Sample mean and epistemic covariance of the T box samples.
/// T = 1 gives a zero covariance.
template <typename Scalar>
BoxMoments<Scalar> aggregate_box(const AnchorPrediction<Scalar>& p) {
  const auto t = p.box_samples.rows();
  if (t < 1) throw ValidationError("anchor prediction needs at least one run");
  BoxMoments<Scalar> out;
  out.mean = p.box_samples.colwise().mean().transpose();
  // Centered second moment: equal to E[f f^T] - mu mu^T without the cancellation.
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 4> centered = p.box_samples.rowwise() - out.mean.transpose();
  Matrix4<Scalar> second = centered.transpose() * centered / static_cast<Scalar>(t);
  out.epistemic_cov = symmetrized(second);
  return out;
}

/// Epistemic covariance plus the run-averaged aleatoric covariance.
template <typename Scalar>
Matrix4<Scalar> combine_covariance(const Matrix4<Scalar>& epistemic_cov,
                                   std::span<const Matrix4<Scalar>> aleatoric_covs) {
  if (aleatoric_covs.empty()) throw ValidationError("combine_covariance needs at least one aleatoric term");
  Matrix4<Scalar> mean_aleatoric = Matrix4<Scalar>::Zero();
  for (const auto& c : aleatoric_covs) mean_aleatoric += c;
  mean_aleatoric /= static_cast<Scalar>(aleatoric_covs.size());
  return symmetrized<Scalar>(epistemic_cov + mean_aleatoric);
}

/// Max-shifted softmax of one logit vector.
template <typename Scalar>
VectorX<Scalar> softmax(const VectorX<Scalar>& logits) {
  const Scalar shift = logits.maxCoeff();
  const VectorX<Scalar> e = (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

/// Average over runs of the per-run softmax probabilities.
template <typename Scalar>
CategoricalDist<Scalar> aggregate_categorical(const AnchorPrediction<Scalar>& p) {
  const auto t = p.logit_samples.rows();
  const auto k = p.logit_samples.cols();
  if (t < 1) throw ValidationError("anchor prediction needs at least one run");
  if (k < 2) throw ValidationError("categorical aggregation needs K >= 2");
  if (!p.logit_samples.allFinite()) throw ValidationError("non-finite logit");
  VectorX<Scalar> acc = VectorX<Scalar>::Zero(k);
  for (Eigen::Index r = 0; r < t; ++r) {
    const VectorX<Scalar> row = p.logit_samples.row(r).transpose();
    acc += softmax(row);
  }
  acc /= static_cast<Scalar>(t);
  return {acc / acc.sum()};
}

using AnchorPredictiond = AnchorPrediction<double>;
using AnchorBeliefd = AnchorBelief<double>;

}  // namespace bayesod
