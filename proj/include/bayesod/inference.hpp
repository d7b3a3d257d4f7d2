#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayesod/bayes_fusion.hpp"

namespace bayesod {

enum class FusionMode { bayesod, nms };
enum class CovarianceMode { full, diagonal };

struct FusionConfig {
  double affinity_threshold = 0.5;
  double score_threshold = 0.1;
  FusionMode mode = FusionMode::bayesod;
  CovarianceMode covariance = CovarianceMode::full;
  bool epistemic = true;
  bool aleatoric = true;
  BoxPriord box_prior = BoxPriord::non_informative();
  std::optional<DirichletStated> dirichlet_prior;  // flat when empty
  CategoryCountConfig counts;
  std::optional<std::size_t> background_index;
  std::size_t expected_runs = 0;  // 0 accepts any T

  void validate() const;
};

/// One fused object.
struct FinalDetection {
  std::int64_t image_id = 0;
  BoxGaussiand box;
  CategoricalDistd category;
  DirichletStated dirichlet;
  double score = 0.0;
  double gaussian_entropy = 0.0;
  double categorical_entropy = 0.0;
  std::vector<std::int64_t> member_anchor_ids;
};

struct InferenceWarning {
  std::int64_t image_id = 0;
  std::int64_t anchor_id = 0;
  std::string message;
};

struct InferenceResult {
  std::vector<FinalDetection> detections;
  std::vector<InferenceWarning> warnings;
};

/// Per-anchor posterior after aggregation and prior incorporation.
struct AnchorPosterior {
  std::int64_t anchor_id = 0;
  BoxGaussiand likelihood;        // aggregated Gaussian before the prior
  BoxGaussiand box;               // posterior Gaussian
  CategoricalDistd marginal;      // run-averaged softmax
  DirichletStated dirichlet;      // posterior pseudo-counts
  CategoricalDistd category;      // Dirichlet mean
};

/// Aggregation and prior update for one anchor, honoring the ablation switches.
AnchorPosterior anchor_posterior(const AnchorPredictiond& pred, const FusionConfig& cfg,
                                 std::int64_t image_id = 0);

/// Full inference for one image: per-anchor posteriors, greedy clustering,
/// cluster fusion (or center-only retention in NMS mode), then filtering.
InferenceResult bayesod_inference(std::span<const AnchorPredictiond> preds, const FusionConfig& cfg,
                                  std::int64_t image_id = 0);

/// Seed of the categorical sampling streams for one image.
std::uint64_t image_count_seed(std::uint64_t seed, std::int64_t image_id);

}  // namespace bayesod
