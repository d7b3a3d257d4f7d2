#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bayesod/errors.hpp"

namespace bayesod {

template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Axis-aligned box in pixel coordinates, corners (x1, y1) top-left and
/// (x2, y2) bottom-right.
template <typename Scalar>
struct Box {
  Scalar x1{0}, y1{0}, x2{0}, y2{0};

  static Box from_vector(const Vector4<Scalar>& v) { return {v(0), v(1), v(2), v(3)}; }
  Vector4<Scalar> as_vector() const { return Vector4<Scalar>(x1, y1, x2, y2); }

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 <= x2 && y1 <= y2;
  }
  bool degenerate() const { return !(x1 < x2 && y1 < y2); }

  friend bool operator==(const Box&, const Box&) = default;
};

template <typename Scalar>
void validate(const Box<Scalar>& b) {
  if (!b.valid()) throw ValidationError("invalid box: corners must be finite with x1<=x2, y1<=y2");
}

/// Gaussian over the corner vector (x1, y1, x2, y2).
template <typename Scalar>
struct BoxGaussian {
  Vector4<Scalar> mean = Vector4<Scalar>::Zero();
  Matrix4<Scalar> cov = Matrix4<Scalar>::Identity();

  Box<Scalar> box() const { return Box<Scalar>::from_vector(mean); }
};

template <typename Scalar>
struct CategoricalDist {
  VectorX<Scalar> probs;

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
};

struct CategoryTable {
  std::vector<std::string> names;
  std::optional<std::size_t> background_index;

  std::size_t size() const { return names.size(); }

  void validate() const {
    if (names.size() < 2) throw ValidationError("category table needs at least two categories");
    std::set<std::string> seen(names.begin(), names.end());
    if (seen.size() != names.size()) throw ValidationError("category names must be unique");
    if (background_index && *background_index >= names.size())
      throw ValidationError("background index out of range");
  }

  friend bool operator==(const CategoryTable&, const CategoryTable&) = default;
};

template <typename Scalar>
bool is_positive_definite(const Matrix4<Scalar>& m) {
  if (!m.allFinite()) return false;
  Eigen::LLT<Matrix4<Scalar>> llt(m);
  return llt.info() == Eigen::Success;
}

template <typename Scalar>
Matrix4<Scalar> symmetrized(const Matrix4<Scalar>& m) {
  return (m + m.transpose()) / Scalar(2);
}

template <typename Scalar>
void validate(const BoxGaussian<Scalar>& g) {
  if (!g.mean.allFinite()) throw ValidationError("box mean must be finite");
  const Scalar scale = std::max(g.cov.cwiseAbs().maxCoeff(), std::numeric_limits<Scalar>::min());
  if ((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9) * scale)
    throw ValidationError("box covariance is not symmetric");
  if (!is_positive_definite(g.cov)) throw NumericalError("box covariance is not positive definite");
}

template <typename Scalar>
void validate(const CategoricalDist<Scalar>& c) {
  if (c.probs.size() < 1) throw ValidationError("empty categorical distribution");
  for (Eigen::Index k = 0; k < c.probs.size(); ++k) {
    const Scalar p = c.probs(k);
    if (!(p >= Scalar(0) && p <= Scalar(1))) throw ValidationError("category probability outside [0,1]");
  }
  if (std::abs(c.probs.sum() - Scalar(1)) > Scalar(1e-9))
    throw ValidationError("category probabilities do not sum to one");
}

/// Intersection over union. Identical zero-area boxes give 1, any other
/// pair with empty union gives 0.
template <typename Scalar>
Scalar iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  validate(a);
  validate(b);
  const Scalar iw = std::max(Scalar(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const Scalar ih = std::max(Scalar(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  if (uni <= Scalar(0)) return a == b ? Scalar(1) : Scalar(0);
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

/// log det of an SPD matrix through its Cholesky factor.
template <typename Scalar>
Scalar log_determinant(const Matrix4<Scalar>& cov) {
  Eigen::LLT<Matrix4<Scalar>> llt(cov);
  if (llt.info() != Eigen::Success || !cov.allFinite())
    throw NumericalError("log determinant of a non positive definite covariance");
  return Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
}

/// Differential entropy of the 4-D box Gaussian in nats.
template <typename Scalar>
Scalar gaussian_entropy(const BoxGaussian<Scalar>& g) {
  using std::numbers::e_v;
  using std::numbers::pi_v;
  const Scalar log_2pie = std::log(Scalar(2) * pi_v<Scalar> * e_v<Scalar>);
  return Scalar(2) * log_2pie + Scalar(0.5) * log_determinant(g.cov);
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
template <typename Scalar>
Scalar categorical_entropy(const CategoricalDist<Scalar>& c) {
  Scalar h = 0;
  for (Eigen::Index k = 0; k < c.probs.size(); ++k) {
    const Scalar p = c.probs(k);
    if (p > Scalar(0)) h -= p * std::log(p);
  }
  return std::max(h, Scalar(0));
}

using Boxd = Box<double>;
using BoxGaussiand = BoxGaussian<double>;
using CategoricalDistd = CategoricalDist<double>;
using Vector4d = Vector4<double>;
using Matrix4d = Matrix4<double>;
using VectorXd = VectorX<double>;

}  // namespace bayesod
