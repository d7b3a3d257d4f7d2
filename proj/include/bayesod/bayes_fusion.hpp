#pragma once

#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "bayesod/bayes_priors.hpp"
#include "bayesod/mc_aggregate.hpp"

namespace bayesod {

/// Indices into the belief list handed to greedy_cluster.
struct Cluster {
  std::size_t center_index = 0;
  std::vector<std::size_t> member_indices;  // includes the center
};

/// Highest probability over non-background categories.
template <typename Scalar>
Scalar foreground_score(const CategoricalDist<Scalar>& c, std::optional<std::size_t> background = {}) {
  Scalar best = Scalar(0);
  for (Eigen::Index k = 0; k < c.probs.size(); ++k) {
    if (background && static_cast<std::size_t>(k) == *background) continue;
    best = std::max(best, c.probs(k));
  }
  return best;
}

template <typename Scalar>
std::size_t foreground_argmax(const CategoricalDist<Scalar>& c, std::optional<std::size_t> background = {}) {
  std::size_t best = background && *background == 0 ? 1 : 0;
  for (Eigen::Index k = 0; k < c.probs.size(); ++k) {
    if (background && static_cast<std::size_t>(k) == *background) continue;
    if (c.probs(k) > c.probs(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  }
  return best;
}

/// Greedy spatial clustering: the highest-scoring unclustered anchor becomes
/// a center and absorbs every unclustered anchor with IoU >= threshold to it.
/// Score ties go to the lowest anchor_id.
template <typename Scalar>
std::vector<Cluster> greedy_cluster(std::span<const AnchorBelief<Scalar>> beliefs, Scalar threshold,
                                    std::optional<std::size_t> background = {}) {
  if (!(threshold > Scalar(0) && threshold < Scalar(1)))
    throw ValidationError("affinity threshold must lie in (0,1)");
  std::vector<std::size_t> order(beliefs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Scalar> score(beliefs.size());
  std::vector<Box<Scalar>> boxes(beliefs.size());
  for (std::size_t i = 0; i < beliefs.size(); ++i) {
    score[i] = foreground_score(beliefs[i].category, background);
    boxes[i] = beliefs[i].box.box();
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return beliefs[a].anchor_id < beliefs[b].anchor_id;
  });

  std::vector<bool> taken(beliefs.size(), false);
  std::vector<Cluster> clusters;
  for (const std::size_t c : order) {
    if (taken[c]) continue;
    Cluster cluster{c, {c}};
    taken[c] = true;
    for (const std::size_t m : order) {
      if (taken[m]) continue;
      if (iou(boxes[c], boxes[m]) >= threshold) {
        cluster.member_indices.push_back(m);
        taken[m] = true;
      }
    }
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

/// Returns `m` if it is positive definite, otherwise m + eps*I with
/// eps = 1e-6 * trace(m) / 4. Throws if the repaired matrix still fails.
template <typename Scalar>
Matrix4<Scalar> ensure_positive_definite(const Matrix4<Scalar>& m) {
  if (is_positive_definite(m)) return m;
  const Scalar eps = Scalar(1e-6) * m.trace() / Scalar(4);
  const Matrix4<Scalar> repaired = m + eps * Matrix4<Scalar>::Identity();
  if (!(eps > Scalar(0)) || !is_positive_definite(repaired))
    throw NumericalError("covariance is not positive definite after regularization");
  return repaired;
}

/// Product of the center posterior and the member likelihoods: precisions
/// add, the mean is the precision-weighted average.
template <typename Scalar>
BoxGaussian<Scalar> fuse_gaussians(const BoxGaussian<Scalar>& center,
                                   std::span<const BoxGaussian<Scalar>> members) {
  // A lone center is its own product; skip the round trip through precision.
  if (members.empty() && center.mean.allFinite() && is_positive_definite(center.cov)) return center;
  const Matrix4<Scalar> identity = Matrix4<Scalar>::Identity();
  Matrix4<Scalar> precision = Matrix4<Scalar>::Zero();
  Vector4<Scalar> info = Vector4<Scalar>::Zero();
  auto accumulate = [&](const BoxGaussian<Scalar>& g) {
    if (!g.mean.allFinite()) throw ValidationError("fusion member mean must be finite");
    Eigen::LLT<Matrix4<Scalar>> llt(ensure_positive_definite(g.cov));
    precision += llt.solve(identity);
    info += llt.solve(g.mean);
  };
  accumulate(center);
  for (const auto& m : members) accumulate(m);

  Eigen::LLT<Matrix4<Scalar>> post(ensure_positive_definite(symmetrized(precision)));
  BoxGaussian<Scalar> out;
  out.cov = symmetrized<Scalar>(post.solve(identity));
  out.mean = post.solve(info);
  return out;
}

/// Adds H categorical counts per member to the center's Dirichlet posterior.
/// `stream_keys`, when given, keys each member's sampling stream (sampled mode).
template <typename Scalar>
DirichletState<Scalar> fuse_dirichlets(const DirichletState<Scalar>& center,
                                       std::span<const CategoricalDist<Scalar>> member_categories,
                                       const CategoryCountConfig& cfg,
                                       std::span<const std::int64_t> stream_keys = {}) {
  if (!stream_keys.empty() && stream_keys.size() != member_categories.size())
    throw ValidationError("one stream key per fused member is required");
  DirichletState<Scalar> out = center;
  for (std::size_t i = 0; i < member_categories.size(); ++i) {
    if (member_categories[i].probs.size() != center.alpha.size())
      throw ValidationError("member category dimension disagrees with the center");
    const std::int64_t key = stream_keys.empty() ? static_cast<std::int64_t>(i) : stream_keys[i];
    out.alpha += category_counts(member_categories[i], cfg, key);
  }
  return out;
}

}  // namespace bayesod
