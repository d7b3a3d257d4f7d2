#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayesod/inference.hpp"

namespace bayesod {

struct GroundTruthObject {
  std::int64_t image_id = 0;
  Boxd box;
  std::size_t category_index = 0;
};

/// Outcome of matching one detection (same index as in the input list).
struct MatchRecord {
  std::size_t detection = 0;
  std::size_t category = 0;
  bool matched = false;
  std::optional<std::size_t> matched_gt;
  double iou_at_match = 0.0;
};

struct MueResult {
  double mue = 50.0;  // percent
  double threshold = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct PdqPair {
  double spatial = 0.0;
  double label = 0.0;
  double quality = 0.0;
};

struct PdqSummary {
  double score = 0.0;  // percent
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double mean_spatial = 0.0;  // over true positives
  double mean_label = 0.0;
};

struct CategoryMetrics {
  std::size_t category = 0;
  std::string name;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
  std::size_t num_tp = 0;
  std::size_t num_fp = 0;
  std::optional<double> ap;
  std::optional<MueResult> gmue;
  std::optional<MueResult> cmue;
};

struct EvalReport {
  std::vector<CategoryMetrics> categories;
  std::optional<double> map;
  std::optional<double> mgmue;
  std::optional<double> mcmue;
  std::optional<PdqSummary> pdq;
  std::vector<std::string> notices;
};

struct MetricSelection {
  bool map = true;
  bool mue = true;
  bool pdq = true;
};

struct EvalOptions {
  MetricSelection metrics;
  double iou_threshold = 0.5;
  std::map<std::int64_t, ImageSize> image_sizes;
  std::optional<ImageSize> default_image_size;
  unsigned threads = 1;
};

/// Category a detection is counted under: argmax over foreground entries.
std::size_t detection_category(const FinalDetection& det, std::optional<std::size_t> background);

/// Greedy score-ordered matching per image and category. Each detection
/// takes the highest-IoU unmatched ground truth of its category when that
/// IoU reaches iou_threshold.
std::vector<MatchRecord> match_detections(std::span<const FinalDetection> dets,
                                          std::span<const GroundTruthObject> gts, double iou_threshold,
                                          std::optional<std::size_t> background = {});

/// All-point interpolated AP in percent from TP flags in descending score order.
double average_precision(const std::vector<bool>& ranked_true_positive, std::size_t num_gt);

/// Minimum over thresholds of 0.5 * P(TP entropy > t) + 0.5 * P(FP entropy <= t),
/// in percent. Candidate thresholds are the observed values and +-infinity;
/// the smallest minimizer is returned.
MueResult minimum_uncertainty_error(std::span<const double> tp_entropies,
                                    std::span<const double> fp_entropies);

/// Probability that pixel centre (cx, cy) lies inside the box implied by the
/// corner Gaussian, from the per-coordinate marginals.
double pixel_inside_probability(const BoxGaussiand& box, double cx, double cy);

PdqPair pairwise_pdq(const FinalDetection& det, const GroundTruthObject& gt,
                     std::optional<ImageSize> image = {});

/// Probability-based detection quality (per cited definition), in percent.
PdqSummary pdq_score(std::span<const FinalDetection> dets, std::span<const GroundTruthObject> gts,
                     const std::map<std::int64_t, ImageSize>& image_sizes = {},
                     std::optional<ImageSize> default_size = {}, unsigned threads = 1);

/// Maximum-weight assignment; result[i] is the column of row i or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight);

EvalReport evaluate(std::span<const FinalDetection> dets, std::span<const GroundTruthObject> gts,
                    const CategoryTable& categories, const EvalOptions& options = {});

}  // namespace bayesod
