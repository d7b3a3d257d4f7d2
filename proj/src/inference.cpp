#include "bayesod/inference.hpp"

#include <algorithm>

namespace bayesod {

void FusionConfig::validate() const {
  if (!(affinity_threshold > 0.0 && affinity_threshold < 1.0))
    throw ValidationError("affinity threshold must lie in (0,1)");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw ValidationError("score threshold must lie in [0,1]");
  if (!epistemic && !aleatoric)
    throw ValidationError("at least one of epistemic and aleatoric uncertainty must be enabled");
  bayesod::validate(counts);
  if (dirichlet_prior) bayesod::validate(*dirichlet_prior);
  if (box_prior.mode == BoxPriorMode::gaussian && !is_positive_definite(box_prior.cov))
    throw ValidationError("gaussian box prior covariance is not positive definite");
}

std::uint64_t image_count_seed(std::uint64_t seed, std::int64_t image_id) {
  return derive_seed(seed, {image_id});
}

namespace {

CategoryCountConfig image_counts(const FusionConfig& cfg, std::int64_t image_id) {
  CategoryCountConfig counts = cfg.counts;
  counts.seed = image_count_seed(cfg.counts.seed, image_id);
  return counts;
}

bool finite_proper_box(const Vector4d& mean) {
  return mean.allFinite() && mean(0) < mean(2) && mean(1) < mean(3);
}

}  // namespace

AnchorPosterior anchor_posterior(const AnchorPredictiond& pred, const FusionConfig& cfg,
                                 std::int64_t image_id) {
  validate(pred);
  const std::size_t k = pred.category_count();
  if (cfg.expected_runs != 0 && pred.run_count() != cfg.expected_runs)
    throw ValidationError("anchor " + std::to_string(pred.anchor_id) + " has " +
                          std::to_string(pred.run_count()) + " runs, expected " +
                          std::to_string(cfg.expected_runs));
  const DirichletStated prior_alpha =
      cfg.dirichlet_prior ? *cfg.dirichlet_prior : make_noninformative<double>(k).second;
  if (prior_alpha.size() != k) throw ValidationError("dirichlet prior dimension disagrees with the logits");

  BoxMoments<double> moments = aggregate_box(pred);
  if (!cfg.epistemic) moments.epistemic_cov.setZero();

  Matrix4d cov = moments.epistemic_cov;
  if (cfg.aleatoric) {
    std::vector<Matrix4d> aleatoric = pred.aleatoric_covs;
    if (cfg.covariance == CovarianceMode::diagonal)
      for (auto& c : aleatoric) c = Matrix4d(c.diagonal().asDiagonal());
    cov = combine_covariance<double>(moments.epistemic_cov, aleatoric);
  }

  AnchorPosterior out;
  out.anchor_id = pred.anchor_id;
  out.likelihood = {moments.mean, ensure_positive_definite(cov)};
  out.box = gaussian_conjugate_update(cfg.box_prior, out.likelihood);
  out.marginal = aggregate_categorical(pred);
  out.dirichlet = dirichlet_posterior(prior_alpha, out.marginal, image_counts(cfg, image_id), pred.anchor_id);
  out.category = dirichlet_mean(out.dirichlet);
  return out;
}

InferenceResult bayesod_inference(std::span<const AnchorPredictiond> preds, const FusionConfig& cfg,
                                  std::int64_t image_id) {
  cfg.validate();
  InferenceResult result;
  if (preds.empty()) return result;

  const std::size_t k = preds.front().category_count();
  std::vector<AnchorPosterior> posteriors;
  posteriors.reserve(preds.size());
  for (const auto& p : preds) {
    if (p.category_count() != k) throw ValidationError("anchors disagree on the category count");
    if (p.box_samples.rows() > 0 && p.box_samples.allFinite()) {
      const Vector4d mean = p.box_samples.colwise().mean().transpose();
      if (!finite_proper_box(mean)) {
        result.warnings.push_back({image_id, p.anchor_id, "degenerate box mean; anchor dropped"});
        continue;
      }
    }
    AnchorPosterior post = anchor_posterior(p, cfg, image_id);
    if (!finite_proper_box(post.box.mean)) {
      result.warnings.push_back({image_id, p.anchor_id, "degenerate posterior box; anchor dropped"});
      continue;
    }
    posteriors.push_back(std::move(post));
  }
  if (posteriors.empty()) return result;

  std::vector<AnchorBeliefd> beliefs;
  beliefs.reserve(posteriors.size());
  for (const auto& p : posteriors) beliefs.push_back({p.anchor_id, p.box, p.category});
  const auto clusters =
      greedy_cluster<double>(beliefs, cfg.affinity_threshold, cfg.background_index);

  const CategoryCountConfig counts = image_counts(cfg, image_id);
  for (const auto& cluster : clusters) {
    const AnchorPosterior& center = posteriors[cluster.center_index];
    FinalDetection det;
    det.image_id = image_id;
    if (cfg.mode == FusionMode::nms) {
      det.box = center.box;
      det.dirichlet = center.dirichlet;
      det.member_anchor_ids = {center.anchor_id};
    } else {
      std::vector<BoxGaussiand> member_boxes;
      std::vector<CategoricalDistd> member_categories;
      std::vector<std::int64_t> keys;
      det.member_anchor_ids.push_back(center.anchor_id);
      for (const std::size_t m : cluster.member_indices) {
        if (m == cluster.center_index) continue;
        member_boxes.push_back(posteriors[m].box);
        member_categories.push_back(posteriors[m].marginal);
        keys.push_back(posteriors[m].anchor_id);
        det.member_anchor_ids.push_back(posteriors[m].anchor_id);
      }
      det.box = fuse_gaussians<double>(center.box, member_boxes);
      det.dirichlet = fuse_dirichlets<double>(center.dirichlet, member_categories, counts, keys);
    }
    det.category = dirichlet_mean(det.dirichlet);
    det.score = foreground_score(det.category, cfg.background_index);
    det.gaussian_entropy = gaussian_entropy(det.box);
    det.categorical_entropy = categorical_entropy(det.category);

    if (cfg.background_index) {
      Eigen::Index arg = 0;
      det.category.probs.maxCoeff(&arg);
      if (static_cast<std::size_t>(arg) == *cfg.background_index) continue;
    }
    if (det.score < cfg.score_threshold) continue;
    result.detections.push_back(std::move(det));
  }
  return result;
}

}  // namespace bayesod
