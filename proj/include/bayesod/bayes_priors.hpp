#pragma once

#include <cstdint>
#include <utility>

#include "bayesod/detection_model.hpp"
#include "bayesod/random.hpp"

namespace bayesod {

enum class BoxPriorMode { non_informative, gaussian };

template <typename Scalar>
struct BoxPrior {
  BoxPriorMode mode = BoxPriorMode::non_informative;
  Vector4<Scalar> mean = Vector4<Scalar>::Zero();
  Matrix4<Scalar> cov = Matrix4<Scalar>::Identity();

  static BoxPrior non_informative() { return {}; }
  static BoxPrior gaussian(const Vector4<Scalar>& mean, const Matrix4<Scalar>& cov) {
    return {BoxPriorMode::gaussian, mean, cov};
  }
};

/// Dirichlet pseudo-counts over K categories.
template <typename Scalar>
struct DirichletState {
  VectorX<Scalar> alpha;

  std::size_t size() const { return static_cast<std::size_t>(alpha.size()); }
  Scalar total() const { return alpha.sum(); }
};

template <typename Scalar>
void validate(const DirichletState<Scalar>& d) {
  if (d.alpha.size() < 2) throw ValidationError("dirichlet state needs K >= 2");
  for (Eigen::Index k = 0; k < d.alpha.size(); ++k)
    if (!(std::isfinite(d.alpha(k)) && d.alpha(k) > Scalar(0)))
      throw ValidationError("dirichlet pseudo-counts must be positive and finite");
}

enum class CountMode { expected, sampled };

/// How many categorical draws each anchor contributes, and whether they are
/// replaced by their expectation.
struct CategoryCountConfig {
  int samples = 30;
  CountMode mode = CountMode::expected;
  std::uint64_t seed = 0;
};

inline void validate(const CategoryCountConfig& cfg) {
  if (cfg.samples < 1) throw ValidationError("category sample budget must be >= 1");
}

/// Conjugate update of a Gaussian box prior with a Gaussian likelihood.
/// A non-informative prior has zero precision, so the likelihood is returned.
template <typename Scalar>
BoxGaussian<Scalar> gaussian_conjugate_update(const BoxPrior<Scalar>& prior,
                                              const BoxGaussian<Scalar>& likelihood) {
  if (!likelihood.mean.allFinite()) throw ValidationError("likelihood mean must be finite");
  Eigen::LLT<Matrix4<Scalar>> lik(likelihood.cov);
  if (lik.info() != Eigen::Success || !likelihood.cov.allFinite())
    throw NumericalError("likelihood covariance is not positive definite");
  if (prior.mode == BoxPriorMode::non_informative) return likelihood;

  Eigen::LLT<Matrix4<Scalar>> pri(prior.cov);
  if (pri.info() != Eigen::Success || !prior.cov.allFinite())
    throw ValidationError("prior covariance is not positive definite");
  if (!prior.mean.allFinite()) throw ValidationError("prior mean must be finite");

  const Matrix4<Scalar> identity = Matrix4<Scalar>::Identity();
  const Matrix4<Scalar> precision = symmetrized<Scalar>(pri.solve(identity) + lik.solve(identity));
  Eigen::LLT<Matrix4<Scalar>> post(precision);
  if (post.info() != Eigen::Success) throw NumericalError("posterior precision is not positive definite");
  const Vector4<Scalar> info = pri.solve(prior.mean) + lik.solve(likelihood.mean);
  BoxGaussian<Scalar> out;
  out.cov = symmetrized<Scalar>(post.solve(identity));
  out.mean = post.solve(info);
  return out;
}

/// Inverse-CDF draw from Cat(probs) using one uniform.
template <typename Scalar>
Eigen::Index sample_category(const VectorX<Scalar>& probs, Engine& engine) {
  const double u = uniform01(engine) * static_cast<double>(probs.sum());
  double cumulative = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs(k) <= Scalar(0)) continue;
    cumulative += static_cast<double>(probs(k));
    last_positive = k;
    if (u < cumulative) return k;
  }
  return last_positive;
}

/// Counts contributed by H categorical draws from `probs`. In expected mode
/// these are H * probs; in sampled mode, integer counts from a stream keyed
/// by (cfg.seed, stream_key).
template <typename Scalar>
VectorX<Scalar> category_counts(const CategoricalDist<Scalar>& category, const CategoryCountConfig& cfg,
                                std::int64_t stream_key) {
  validate(cfg);
  const Scalar h = static_cast<Scalar>(cfg.samples);
  if (cfg.mode == CountMode::expected) {
    // Renormalize so the added mass is exactly H up to rounding.
    return category.probs * (h / category.probs.sum());
  }
  Engine engine(derive_seed(cfg.seed, {stream_key}));
  VectorX<Scalar> counts = VectorX<Scalar>::Zero(category.probs.size());
  for (int s = 0; s < cfg.samples; ++s) counts(sample_category(category.probs, engine)) += Scalar(1);
  return counts;
}

template <typename Scalar>
DirichletState<Scalar> dirichlet_posterior(const DirichletState<Scalar>& prior,
                                           const CategoricalDist<Scalar>& category,
                                           const CategoryCountConfig& cfg, std::int64_t stream_key = 0) {
  if (prior.alpha.size() != category.probs.size())
    throw ValidationError("dirichlet prior and category dimension disagree");
  return {prior.alpha + category_counts(category, cfg, stream_key)};
}

template <typename Scalar>
CategoricalDist<Scalar> dirichlet_mean(const DirichletState<Scalar>& d) {
  validate(d);
  return {d.alpha / d.alpha.sum()};
}

/// Zero-precision box prior and flat Dirichlet (all pseudo-counts 1).
template <typename Scalar>
std::pair<BoxPrior<Scalar>, DirichletState<Scalar>> make_noninformative(std::size_t categories) {
  if (categories < 2) throw ValidationError("non-informative prior needs K >= 2");
  return {BoxPrior<Scalar>::non_informative(),
          DirichletState<Scalar>{VectorX<Scalar>::Ones(static_cast<Eigen::Index>(categories))}};
}

using BoxPriord = BoxPrior<double>;
using DirichletStated = DirichletState<double>;

}  // namespace bayesod
