#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "bayesod/detection_model.hpp"

namespace bayesod {

template <typename Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;

/// Sigma = L D L^T with unit lower-triangular L and D = diag(exp(log_d)).
/// l_strict holds the strictly lower entries row-major:
/// (1,0) (2,0) (2,1) (3,0) (3,1) (3,2).
template <typename Scalar>
struct LdlFactors {
  Vector6<Scalar> l_strict = Vector6<Scalar>::Zero();
  Vector4<Scalar> log_d = Vector4<Scalar>::Zero();

  Matrix4<Scalar> unit_lower() const {
    Matrix4<Scalar> l = Matrix4<Scalar>::Identity();
    int n = 0;
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < i; ++j) l(i, j) = l_strict(n++);
    return l;
  }
  Vector4<Scalar> d() const { return log_d.array().exp().matrix(); }
};

/// One regression target. Diagonal losses read `variance`, multivariate
/// losses read `factors`.
template <typename Scalar>
struct LossSample {
  Vector4<Scalar> prediction = Vector4<Scalar>::Zero();
  Vector4<Scalar> target = Vector4<Scalar>::Zero();
  std::optional<Vector4<Scalar>> variance;
  std::optional<LdlFactors<Scalar>> factors;
};

enum class LossKind { diag, mv, surrogate };

/// Gradient with respect to every loss parameter. `scale` is w.r.t. the
/// variance (diag) or log_d (mv, surrogate); `l_strict` is zero for diag.
template <typename Scalar>
struct LossGradient {
  Vector4<Scalar> prediction = Vector4<Scalar>::Zero();
  Vector4<Scalar> scale = Vector4<Scalar>::Zero();
  Vector6<Scalar> l_strict = Vector6<Scalar>::Zero();
};

namespace detail {

template <typename Scalar>
const Vector4<Scalar>& require_variance(const LossSample<Scalar>& s) {
  if (!s.variance) throw ValidationError("diagonal loss needs a per-dimension variance");
  const auto& v = *s.variance;
  for (int i = 0; i < 4; ++i)
    if (!(v(i) > Scalar(0)) || !std::isfinite(v(i))) throw ValidationError("variance must be positive");
  return v;
}

template <typename Scalar>
const LdlFactors<Scalar>& require_factors(const LossSample<Scalar>& s) {
  if (!s.factors) throw ValidationError("multivariate loss needs LDL factors");
  if (!s.factors->l_strict.allFinite() || !s.factors->log_d.allFinite())
    throw ValidationError("LDL factors must be finite");
  return *s.factors;
}

}  // namespace detail

/// Inverse of a unit lower-triangular 4x4 matrix by forward substitution.
template <typename Scalar>
Matrix4<Scalar> unit_lower_inverse(const Matrix4<Scalar>& l) {
  Matrix4<Scalar> inv = Matrix4<Scalar>::Identity();
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) {
      Scalar acc = 0;
      for (int k = j; k < i; ++k) acc -= l(i, k) * inv(k, j);
      inv(i, j) = acc;
    }
  return inv;
}

template <typename Scalar>
Matrix4<Scalar> ldl_compose(const LdlFactors<Scalar>& f) {
  const Matrix4<Scalar> l = f.unit_lower();
  return symmetrized<Scalar>(l * f.d().asDiagonal() * l.transpose());
}

/// Unpivoted LDL^T of an SPD matrix.
template <typename Scalar>
LdlFactors<Scalar> ldl_factorize(const Matrix4<Scalar>& sigma) {
  Matrix4<Scalar> l = Matrix4<Scalar>::Identity();
  Vector4<Scalar> d;
  for (int j = 0; j < 4; ++j) {
    Scalar dj = sigma(j, j);
    for (int k = 0; k < j; ++k) dj -= l(j, k) * l(j, k) * d(k);
    if (!(dj > Scalar(0))) throw NumericalError("LDL factorization of a non positive definite matrix");
    d(j) = dj;
    for (int i = j + 1; i < 4; ++i) {
      Scalar v = sigma(i, j);
      for (int k = 0; k < j; ++k) v -= l(i, k) * l(j, k) * d(k);
      l(i, j) = v / dj;
    }
  }
  LdlFactors<Scalar> f;
  int n = 0;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) f.l_strict(n++) = l(i, j);
  f.log_d = d.array().log().matrix();
  return f;
}

/// Independent Gaussian NLL per coordinate (constant term dropped).
template <typename Scalar>
Scalar diag_nll(const LossSample<Scalar>& s) {
  const auto& v = detail::require_variance(s);
  const Vector4<Scalar> r = s.target - s.prediction;
  return (r.array().square() / (Scalar(2) * v.array()) + Scalar(0.5) * v.array().log()).sum();
}

/// Full-covariance Gaussian NLL; log det = sum(log_d) since det L = 1.
template <typename Scalar>
Scalar mv_nll(const LossSample<Scalar>& s) {
  const auto& f = detail::require_factors(s);
  const Vector4<Scalar> e = s.prediction - s.target;
  const Vector4<Scalar> z = unit_lower_inverse(f.unit_lower()) * e;
  return Scalar(0.5) * (z.array().square() / f.d().array()).sum() + Scalar(0.5) * f.log_d.sum();
}

/// 0.5 * ||L^-1||_F^2 * ||D^-1/2 e||^2 + 0.5 * tr(log D).
template <typename Scalar>
Scalar ldl_surrogate(const LossSample<Scalar>& s) {
  const auto& f = detail::require_factors(s);
  const Vector4<Scalar> e = s.prediction - s.target;
  const Scalar frob = unit_lower_inverse(f.unit_lower()).squaredNorm();
  return Scalar(0.5) * frob * (e.array().square() / f.d().array()).sum() + Scalar(0.5) * f.log_d.sum();
}

template <typename Scalar>
Scalar evaluate_loss(LossKind kind, const LossSample<Scalar>& s) {
  switch (kind) {
    case LossKind::diag: return diag_nll(s);
    case LossKind::mv: return mv_nll(s);
    case LossKind::surrogate: return ldl_surrogate(s);
  }
  throw ValidationError("unknown loss kind");
}

/// Analytic gradients of the three losses.
template <typename Scalar>
LossGradient<Scalar> loss_gradient(LossKind kind, const LossSample<Scalar>& s) {
  LossGradient<Scalar> g;
  if (kind == LossKind::diag) {
    const auto& v = detail::require_variance(s);
    const Vector4<Scalar> e = s.prediction - s.target;
    g.prediction = (e.array() / v.array()).matrix();
    g.scale = (Scalar(0.5) / v.array() - e.array().square() / (Scalar(2) * v.array().square())).matrix();
    return g;
  }

  const auto& f = detail::require_factors(s);
  const Vector4<Scalar> e = s.prediction - s.target;
  const Vector4<Scalar> d = f.d();
  const Matrix4<Scalar> m = unit_lower_inverse(f.unit_lower());

  if (kind == LossKind::mv) {
    const Vector4<Scalar> z = m * e;
    const Vector4<Scalar> w = (z.array() / d.array()).matrix();
    const Vector4<Scalar> u = m.transpose() * w;  // Sigma^-1 e
    g.prediction = u;
    g.scale = (Scalar(0.5) - Scalar(0.5) * z.array().square() / d.array()).matrix();
    int n = 0;
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < i; ++j) g.l_strict(n++) = -u(i) * z(j);
    return g;
  }

  const Scalar frob = m.squaredNorm();
  const Scalar q = (e.array().square() / d.array()).sum();
  g.prediction = frob * (e.array() / d.array()).matrix();
  g.scale = (Scalar(0.5) - Scalar(0.5) * frob * e.array().square() / d.array()).matrix();
  // d||L^-1||_F^2 / dL = -2 M^T M M^T with M = L^-1.
  const Matrix4<Scalar> dfrob = Scalar(-2) * m.transpose() * m * m.transpose();
  int n = 0;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) g.l_strict(n++) = Scalar(0.5) * q * dfrob(i, j);
  return g;
}

template <typename To, typename From>
LossSample<To> cast_sample(const LossSample<From>& s) {
  LossSample<To> out;
  out.prediction = s.prediction.template cast<To>();
  out.target = s.target.template cast<To>();
  if (s.variance) out.variance = s.variance->template cast<To>();
  if (s.factors) out.factors = LdlFactors<To>{s.factors->l_strict.template cast<To>(), s.factors->log_d.template cast<To>()};
  return out;
}

/// Largest relative discrepancy between analytic gradients and central
/// finite differences. Relative error is |a - n| / max(|a|, |n|, 1e-6).
/// The difference quotient is evaluated in long double so that rounding in
/// the loss value does not swamp near-zero gradient components.
template <typename Scalar>
Scalar grad_check(LossKind kind, const LossSample<Scalar>& s, Scalar step) {
  using Wide = long double;
  if (!(step > Scalar(0))) throw ValidationError("finite-difference step must be positive");
  const LossGradient<Scalar> analytic = loss_gradient(kind, s);
  const LossSample<Wide> wide = cast_sample<Wide>(s);
  Scalar worst = 0;
  auto compare = [&](Scalar a, auto&& perturb) {
    LossSample<Wide> plus = wide, minus = wide;
    perturb(plus, Wide(step));
    perturb(minus, -Wide(step));
    const auto numeric = static_cast<Scalar>((evaluate_loss(kind, plus) - evaluate_loss(kind, minus)) /
                                             (Wide(2) * Wide(step)));
    const Scalar denom = std::max({std::abs(a), std::abs(numeric), Scalar(1e-6)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (int i = 0; i < 4; ++i)
    compare(analytic.prediction(i), [i](LossSample<Wide>& x, Wide h) { x.prediction(i) += h; });
  if (kind == LossKind::diag) {
    for (int i = 0; i < 4; ++i)
      compare(analytic.scale(i), [i](LossSample<Wide>& x, Wide h) { (*x.variance)(i) += h; });
    return worst;
  }
  for (int i = 0; i < 4; ++i)
    compare(analytic.scale(i), [i](LossSample<Wide>& x, Wide h) { x.factors->log_d(i) += h; });
  for (int i = 0; i < 6; ++i)
    compare(analytic.l_strict(i), [i](LossSample<Wide>& x, Wide h) { x.factors->l_strict(i) += h; });
  return worst;
}

using LdlFactorsd = LdlFactors<double>;
using LossSampled = LossSample<double>;

}  // namespace bayesod
