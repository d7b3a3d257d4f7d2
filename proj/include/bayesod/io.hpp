#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bayesod/eval_metrics.hpp"
#include "bayesod/loss_lab.hpp"

namespace bayesod {

inline constexpr int kSchemaVersion = 1;

/// Aleatoric covariance packing in prediction files.
enum class CovPacking { upper, diagonal };

struct PredictionHeader {
  CategoryTable categories;
  std::size_t runs = 0;
  CovPacking packing = CovPacking::upper;
};

struct PredictionRecord {
  std::int64_t image_id = 0;
  AnchorPredictiond anchor;
};

struct PredictionFile {
  PredictionHeader header;
  std::vector<PredictionRecord> records;
};

struct DetectionFile {
  CategoryTable categories;
  std::size_t runs = 0;
  std::vector<FinalDetection> detections;
};

struct GroundTruthFile {
  CategoryTable categories;
  std::optional<ImageSize> image_size;
  std::size_t num_images = 0;
  std::vector<GroundTruthObject> objects;
};

/// Row-major upper triangle: (0,0) (0,1) (0,2) (0,3) (1,1) (1,2) (1,3) (2,2) (2,3) (3,3).
std::array<double, 10> pack_upper(const Matrix4d& m);
Matrix4d unpack_upper(std::span<const double> packed);

void write_predictions(std::ostream& os, const PredictionFile& file);
PredictionFile read_predictions(std::istream& is);
void write_detections(std::ostream& os, const DetectionFile& file);
DetectionFile read_detections(std::istream& is);
void write_ground_truth(std::ostream& os, const GroundTruthFile& file);
GroundTruthFile read_ground_truth(std::istream& is);

void save_predictions(const std::string& path, const PredictionFile& file);
PredictionFile load_predictions(const std::string& path);
void save_detections(const std::string& path, const DetectionFile& file);
DetectionFile load_detections(const std::string& path);
void save_ground_truth(const std::string& path, const GroundTruthFile& file);
GroundTruthFile load_ground_truth(const std::string& path);

/// Loss samples, one JSON object per line; an optional header line is skipped.
std::vector<LossSampled> read_loss_samples(std::istream& is);

/// Box and Dirichlet prior from a JSON document:
/// {"box": {"mean": [4], "cov": [10]} | "noninformative", "alpha": [K]}.
std::pair<BoxPriord, std::optional<DirichletStated>> load_prior(const std::string& path, std::size_t categories);

std::string report_to_json(const EvalReport& report, const MetricSelection& metrics, double iou_threshold);

std::string read_text_file(const std::string& path);

}  // namespace bayesod
