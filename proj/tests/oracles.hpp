// Test-only reference implementations. Each one follows a different
// computational route from the library code it checks.
#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "bayesod/inference.hpp"
#include "bayesod/random.hpp"

namespace oracle {

using bayesod::Matrix4d;
using bayesod::Vector4d;
using bayesod::VectorXd;
using Matrix4l = Eigen::Matrix<long double, 4, 4>;
using Vector4l = Eigen::Matrix<long double, 4, 1>;

inline Matrix4d random_spd(std::mt19937_64& rng, double scale = 1.0, double floor = 0.1) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix4d a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = n(rng);
  Matrix4d s = scale * (a * a.transpose() + floor * Matrix4d::Identity());
  return (s + s.transpose()) / 2.0;
}

inline Vector4d random_vec(std::mt19937_64& rng, double scale = 1.0, double offset = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector4d v;
  for (int i = 0; i < 4; ++i) v(i) = offset + scale * n(rng);
  return v;
}

inline double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// Raw second moment minus outer product of the mean, in long double loops.
inline Matrix4d raw_moment_covariance(const Eigen::Matrix<double, Eigen::Dynamic, 4>& samples) {
  const long double t = static_cast<long double>(samples.rows());
  long double mean[4] = {0, 0, 0, 0};
  for (Eigen::Index r = 0; r < samples.rows(); ++r)
    for (int i = 0; i < 4; ++i) mean[i] += samples(r, i);
  for (auto& m : mean) m /= t;
  Matrix4d out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      long double acc = 0;
      for (Eigen::Index r = 0; r < samples.rows(); ++r)
        acc += static_cast<long double>(samples(r, i)) * samples(r, j);
      out(i, j) = static_cast<double>(acc / t - mean[i] * mean[j]);
    }
  return out;
}

// Explicit LU inverses in long double: precision addition.
inline bayesod::BoxGaussiand precision_form_fuse(const std::vector<bayesod::BoxGaussiand>& parts) {
  Matrix4l precision = Matrix4l::Zero();
  Vector4l info = Vector4l::Zero();
  for (const auto& g : parts) {
    const Matrix4l inv = g.cov.cast<long double>().fullPivLu().inverse();
    precision += inv;
    info += inv * g.mean.cast<long double>();
  }
  const Matrix4l cov = precision.fullPivLu().inverse();
  return {(cov * info).cast<double>(), cov.cast<double>()};
}

inline VectorXd naive_softmax_average(const Eigen::MatrixXd& logits) {
  VectorXd acc = VectorXd::Zero(logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    double z = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(logits(t, k));
    for (Eigen::Index k = 0; k < logits.cols(); ++k) acc(k) += std::exp(logits(t, k)) / z;
  }
  return acc / static_cast<double>(logits.rows());
}

// Replays the documented sampling stream: engine seeded by derive_seed(seed,
// {key}), one 53-bit uniform per draw, first category whose running sum
// exceeds u.
inline VectorXd replay_category_counts(const VectorXd& probs, int draws, std::uint64_t seed, std::int64_t key) {
  std::mt19937_64 e(bayesod::derive_seed(seed, {key}));
  VectorXd counts = VectorXd::Zero(probs.size());
  for (int h = 0; h < draws; ++h) {
    const double u = static_cast<double>(e() >> 11) / 9007199254740992.0 * probs.sum();
    double run = 0;
    Eigen::Index pick = 0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      if (probs(k) <= 0) continue;
      run += probs(k);
      pick = k;
      if (u < run) break;
    }
    counts(pick) += 1;
  }
  return counts;
}

// O(n^2) sweep of every observed value plus the two infinite thresholds.
inline double brute_force_mue(const std::vector<double>& tp, const std::vector<double>& fp) {
  std::vector<double> cands = tp;
  cands.insert(cands.end(), fp.begin(), fp.end());
  cands.push_back(-std::numeric_limits<double>::infinity());
  cands.push_back(std::numeric_limits<double>::infinity());
  double best = std::numeric_limits<double>::infinity();
  for (const double t : cands) {
    std::size_t a = 0, b = 0;
    for (const double x : tp) a += x > t;
    for (const double x : fp) b += x <= t;
    const double ue = 100.0 * (0.5 * static_cast<double>(a) / static_cast<double>(tp.size()) +
                               0.5 * static_cast<double>(b) / static_cast<double>(fp.size()));
    best = std::min(best, ue);
  }
  return best;
}

inline double box_iou(const Vector4d& a, const Vector4d& b) {
  const double w = std::max(0.0, std::min(a(2), b(2)) - std::max(a(0), b(0)));
  const double h = std::max(0.0, std::min(a(3), b(3)) - std::max(a(1), b(1)));
  const double inter = w * h;
  const double uni = (a(2) - a(0)) * (a(3) - a(1)) + (b(2) - b(0)) * (b(3) - b(1)) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Straight-line replay of the full fusion chain for one image with flat
// priors and expected counts: loops, explicit inverses, no library calls
// beyond Eigen.
struct ReplayDetection {
  Vector4d mean;
  Matrix4d cov;
  VectorXd probs;
  std::vector<std::int64_t> members;
};

inline std::vector<ReplayDetection> replay_inference(const std::vector<bayesod::AnchorPredictiond>& preds,
                                                     double affinity, int h, double score_threshold) {
  struct Anchor {
    std::int64_t id;
    Vector4d mean;
    Matrix4d cov;
    VectorXd phat;
    VectorXd alpha;
    double score;
  };
  std::vector<Anchor> anchors;
  for (const auto& p : preds) {
    const auto t = p.box_samples.rows();
    const auto k = p.logit_samples.cols();
    Vector4d mean = Vector4d::Zero();
    for (Eigen::Index r = 0; r < t; ++r) mean += p.box_samples.row(r).transpose();
    mean /= static_cast<double>(t);
    Matrix4d cov = raw_moment_covariance(p.box_samples);
    for (const auto& c : p.aleatoric_covs) cov += c / static_cast<double>(t);
    const VectorXd phat = naive_softmax_average(p.logit_samples);
    const VectorXd alpha = VectorXd::Ones(k) + h * phat;
    anchors.push_back({p.anchor_id, mean, cov, phat, alpha, (alpha / alpha.sum()).maxCoeff()});
  }
  std::vector<std::size_t> order(anchors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return anchors[a].score != anchors[b].score ? anchors[a].score > anchors[b].score
                                                : anchors[a].id < anchors[b].id;
  });
  std::vector<bool> used(anchors.size(), false);
  std::vector<ReplayDetection> out;
  for (const std::size_t c : order) {
    if (used[c]) continue;
    used[c] = true;
    std::vector<bayesod::BoxGaussiand> parts{{anchors[c].mean, anchors[c].cov}};
    VectorXd alpha = anchors[c].alpha;
    std::vector<std::int64_t> members{anchors[c].id};
    for (const std::size_t m : order) {
      if (used[m] || box_iou(anchors[c].mean, anchors[m].mean) < affinity) continue;
      used[m] = true;
      parts.push_back({anchors[m].mean, anchors[m].cov});
      alpha += h * anchors[m].phat;
      members.push_back(anchors[m].id);
    }
    const auto fused = precision_form_fuse(parts);
    const VectorXd probs = alpha / alpha.sum();
    if (probs.maxCoeff() < score_threshold) continue;
    out.push_back({fused.mean, fused.cov, probs, members});
  }
  return out;
}

}  // namespace oracle
