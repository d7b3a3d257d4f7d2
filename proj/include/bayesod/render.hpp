#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bayesod/eval_metrics.hpp"

namespace bayesod {

enum class TrustBand { reliable, slightly_reliable, unreliable };

struct CornerEllipse {
  double cx = 0.0, cy = 0.0;
  double rx = 0.0, ry = 0.0;   // semi-axes, rx along the major axis
  double angle_deg = 0.0;      // rotation of the major axis
};

/// Radius multiplier of the 95% confidence ellipse of a 2-D Gaussian.
double confidence_scale_95();

/// Ellipse of corner 0 (x1, y1) or 1 (x2, y2) from its 2x2 marginal covariance.
CornerEllipse corner_ellipse(const BoxGaussiand& box, int corner);

/// Band by Gaussian entropy: <= low is reliable, <= high slightly reliable.
TrustBand trust_band(double gaussian_entropy, double low, double high);

std::string render_svg(std::span<const FinalDetection> detections, ImageSize size, double low, double high);

/// Writes image_<id>.svg for every image with detections; returns the paths.
std::vector<std::string> render_directory(std::span<const FinalDetection> detections, ImageSize size,
                                          const std::string& out_dir, double low, double high,
                                          unsigned threads = 1);

}  // namespace bayesod
