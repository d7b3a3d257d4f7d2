#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bayesod/eval_metrics.hpp"
#include "bayesod/mc_aggregate.hpp"

namespace bayesod {

template <typename T>
struct Range {
  T lo{};
  T hi{};
};

/// How the reported aleatoric covariance relates to the true corner noise.
enum class AleatoricModel { faithful, overconfident, underconfident };

struct SceneConfig {
  int image_width = 640;
  int image_height = 480;
  int num_images = 100;
  CategoryTable categories{{"car", "pedestrian", "cyclist"}, std::nullopt};
  Range<int> objects_per_image{1, 4};
  Range<double> box_size{40.0, 160.0};
  Range<int> anchors_per_object{3, 8};
  double false_anchor_rate = 3.0;  // expected background anchors per image
  double noise = 4.0;              // per-corner std, pixels
  double corner_correlation = 0.3;  // between x1/x2 and between y1/y2
  AleatoricModel aleatoric_model = AleatoricModel::faithful;
  double logit_sharpness = 4.0;
  double background_sharpness = 1.0;
  double logit_noise = 0.5;
  int runs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticScene {
  std::int64_t image_id = 0;
  std::vector<GroundTruthObject> ground_truth;
  std::vector<AnchorPredictiond> predictions;
  // Ground-truth index each anchor was generated from; empty for background.
  std::vector<std::optional<std::size_t>> provenance;
};

/// True per-run corner noise covariance.
Matrix4d noise_covariance(const SceneConfig& cfg);

/// Aleatoric covariance the simulated detector reports.
Matrix4d reported_aleatoric_covariance(const SceneConfig& cfg);

SyntheticScene generate_scene(const SceneConfig& cfg, std::int64_t image_id);

/// Scenes 0..num_images-1; identical for any thread count.
std::vector<SyntheticScene> generate_dataset(const SceneConfig& cfg, unsigned threads = 1);

/// Applies one `key=value` setting; throws ValidationError on unknown keys.
void apply_setting(SceneConfig& cfg, const std::string& key, const std::string& value);

/// Parses a flat key=value file body ('#' comments, blank lines allowed).
SceneConfig parse_scene_config(const std::string& text, SceneConfig base = {});

std::string to_string(AleatoricModel m);

}  // namespace bayesod
