#include "bayesod/render.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

namespace bayesod {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v + 0.0);
  std::string s(buf);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

const char* band_color(TrustBand b) {
  switch (b) {
    case TrustBand::reliable: return "#008080";
    case TrustBand::slightly_reliable: return "#ffa500";
    case TrustBand::unreliable: return "#ff0000";
  }
  return "#ff0000";
}

const char* band_name(TrustBand b) {
  switch (b) {
    case TrustBand::reliable: return "reliable";
    case TrustBand::slightly_reliable: return "slightly-reliable";
    case TrustBand::unreliable: return "unreliable";
  }
  return "unreliable";
}

}  // namespace

double confidence_scale_95() { return std::sqrt(-2.0 * std::log(0.05)); }

CornerEllipse corner_ellipse(const BoxGaussiand& box, int corner) {
  if (corner != 0 && corner != 1) throw ValidationError("corner must be 0 or 1");
  const int o = 2 * corner;
  const Eigen::Matrix2d c = box.cov.block<2, 2>(o, o);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
  const Eigen::Vector2d vals = es.eigenvalues().cwiseMax(0.0);  // ascending
  const Eigen::Vector2d major = es.eigenvectors().col(1);
  const double k = confidence_scale_95();
  CornerEllipse e;
  e.cx = box.mean(o);
  e.cy = box.mean(o + 1);
  e.rx = k * std::sqrt(vals(1));
  e.ry = k * std::sqrt(vals(0));
  double angle = std::atan2(major(1), major(0)) * 180.0 / std::numbers::pi;
  // Axis direction is sign-free; keep the angle in (-90, 90].
  if (angle > 90.0) angle -= 180.0;
  if (angle <= -90.0) angle += 180.0;
  e.angle_deg = vals(1) == vals(0) ? 0.0 : angle;
  return e;
}

TrustBand trust_band(double h, double low, double high) {
  if (h <= low) return TrustBand::reliable;
  if (h <= high) return TrustBand::slightly_reliable;
  return TrustBand::unreliable;
}

std::string render_svg(std::span<const FinalDetection> detections, ImageSize size, double low, double high) {
  if (!(low <= high)) throw ValidationError("entropy thresholds must be ordered");
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size.width) + "\" height=\"" +
       std::to_string(size.height) + "\" viewBox=\"0 0 " + std::to_string(size.width) + " " +
       std::to_string(size.height) + "\">\n";
  s += "  <rect x=\"0\" y=\"0\" width=\"" + std::to_string(size.width) + "\" height=\"" +
       std::to_string(size.height) + "\" fill=\"#ffffff\"/>\n";
  for (const auto& d : detections) {
    const TrustBand band = trust_band(d.gaussian_entropy, low, high);
    const char* color = band_color(band);
    const auto& m = d.box.mean;
    s += "  <g class=\"detection " + std::string(band_name(band)) + "\" data-entropy=\"" + fmt(d.gaussian_entropy) +
         "\" data-score=\"" + fmt(d.score) + "\">\n";
    s += "    <rect x=\"" + fmt(m(0)) + "\" y=\"" + fmt(m(1)) + "\" width=\"" + fmt(m(2) - m(0)) + "\" height=\"" +
         fmt(m(3) - m(1)) + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    for (int corner = 0; corner < 2; ++corner) {
      const CornerEllipse e = corner_ellipse(d.box, corner);
      s += "    <ellipse cx=\"" + fmt(e.cx) + "\" cy=\"" + fmt(e.cy) + "\" rx=\"" + fmt(e.rx) + "\" ry=\"" +
           fmt(e.ry) + "\" transform=\"rotate(" + fmt(e.angle_deg) + " " + fmt(e.cx) + " " + fmt(e.cy) +
           ")\" fill=\"" + color + "\" fill-opacity=\"0.3\" stroke=\"" + color + "\"/>\n";
    }
    s += "  </g>\n";
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::string> render_directory(std::span<const FinalDetection> detections, ImageSize size,
                                          const std::string& out_dir, double low, double high, unsigned threads) {
  std::map<std::int64_t, std::vector<FinalDetection>> by_image;
  for (const auto& d : detections) by_image[d.image_id].push_back(d);
  std::filesystem::create_directories(out_dir);

  std::vector<std::pair<std::int64_t, const std::vector<FinalDetection>*>> jobs;
  for (const auto& [id, dets] : by_image) jobs.emplace_back(id, &dets);
  std::vector<std::string> paths(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i)
    paths[i] = (std::filesystem::path(out_dir) / ("image_" + std::to_string(jobs[i].first) + ".svg")).string();

  auto work = [&](std::size_t i) {
    std::ofstream os(paths[i], std::ios::binary);
    if (!os) throw ValidationError("cannot write '" + paths[i] + "'");
    os << render_svg(*jobs[i].second, size, low, high);
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < jobs.size(); i += threads) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return paths;
}

}  // namespace bayesod
