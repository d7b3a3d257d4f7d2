#include "bayesod/synth_detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "bayesod/random.hpp"

namespace bayesod {

namespace {

constexpr std::int64_t kSceneStream = -1;
constexpr double kBackgroundMaxIou = 0.05;
constexpr int kPlacementAttempts = 64;

double uniform(Engine& e, double lo, double hi) { return lo + (hi - lo) * uniform01(e); }

int uniform_int(Engine& e, int lo, int hi) {
  return lo + static_cast<int>(std::floor(uniform01(e) * static_cast<double>(hi - lo + 1)));
}

Boxd random_box(const SceneConfig& cfg, Engine& e) {
  const double w = uniform(e, cfg.box_size.lo, cfg.box_size.hi);
  const double h = uniform(e, cfg.box_size.lo, cfg.box_size.hi);
  const double x = uniform(e, 0.0, cfg.image_width - w);
  const double y = uniform(e, 0.0, cfg.image_height - h);
  return {x, y, x + w, y + h};
}

double aleatoric_scale(AleatoricModel m) {
  switch (m) {
    case AleatoricModel::faithful: return 1.0;
    case AleatoricModel::overconfident: return 0.25;
    case AleatoricModel::underconfident: return 4.0;
  }
  return 1.0;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  int out = 0;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ValidationError("setting '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ValidationError("setting '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T, typename Parse>
Range<T> parse_range(const std::string& key, const std::string& v, Parse parse) {
  const auto sep = v.find(',');
  if (sep == std::string::npos) {
    const T x = parse(key, trim(v));
    return {x, x};
  }
  return {parse(key, trim(v.substr(0, sep))), parse(key, trim(v.substr(sep + 1)))};
}

}  // namespace

void SceneConfig::validate() const {
  categories.validate();
  if (image_width <= 0 || image_height <= 0) throw ValidationError("image size must be positive");
  if (num_images < 0) throw ValidationError("num_images must be >= 0");
  if (objects_per_image.lo < 0 || objects_per_image.lo > objects_per_image.hi)
    throw ValidationError("objects_per_image range must be non-negative and ordered");
  if (!(box_size.lo > 0.0) || box_size.lo > box_size.hi) throw ValidationError("box_size range must be positive and ordered");
  if (box_size.hi > image_width || box_size.hi > image_height)
    throw ValidationError("box_size exceeds the image; objects cannot be placed");
  if (anchors_per_object.lo < 1 || anchors_per_object.lo > anchors_per_object.hi)
    throw ValidationError("anchors_per_object range must be >= 1 and ordered");
  if (!(false_anchor_rate >= 0.0)) throw ValidationError("false_anchor_rate must be >= 0");
  if (!(noise >= 0.0)) throw ValidationError("noise must be >= 0");
  if (!(corner_correlation > -1.0 && corner_correlation < 1.0))
    throw ValidationError("corner_correlation must lie in (-1,1)");
  if (!(logit_sharpness >= 0.0) || !(background_sharpness >= 0.0) || !(logit_noise >= 0.0))
    throw ValidationError("logit parameters must be >= 0");
  if (runs < 1) throw ValidationError("runs must be >= 1");
}

Matrix4d noise_covariance(const SceneConfig& cfg) {
  const double var = cfg.noise * cfg.noise;
  Matrix4d c = var * Matrix4d::Identity();
  c(0, 2) = c(2, 0) = cfg.corner_correlation * var;
  c(1, 3) = c(3, 1) = cfg.corner_correlation * var;
  return c;
}

Matrix4d reported_aleatoric_covariance(const SceneConfig& cfg) {
  Matrix4d c = aleatoric_scale(cfg.aleatoric_model) * noise_covariance(cfg);
  // A zero-noise world still reports a usable covariance.
  if (cfg.noise == 0.0) c = 1e-6 * Matrix4d::Identity();
  return c;
}

SyntheticScene generate_scene(const SceneConfig& cfg, std::int64_t image_id) {
  cfg.validate();
  const std::size_t k = cfg.categories.size();
  std::vector<std::size_t> foreground;
  for (std::size_t c = 0; c < k; ++c)
    if (!cfg.categories.background_index || c != *cfg.categories.background_index) foreground.push_back(c);

  SyntheticScene scene;
  scene.image_id = image_id;
  Engine layout(derive_seed(cfg.seed, {image_id, kSceneStream}));

  const int num_objects = uniform_int(layout, cfg.objects_per_image.lo, cfg.objects_per_image.hi);
  std::vector<int> anchors_for(static_cast<std::size_t>(num_objects));
  for (int o = 0; o < num_objects; ++o) {
    const Boxd box = random_box(cfg, layout);
    const std::size_t cat = foreground[static_cast<std::size_t>(uniform_int(layout, 0, static_cast<int>(foreground.size()) - 1))];
    scene.ground_truth.push_back({image_id, box, cat});
    anchors_for[static_cast<std::size_t>(o)] = uniform_int(layout, cfg.anchors_per_object.lo, cfg.anchors_per_object.hi);
  }
  std::poisson_distribution<int> background_count(cfg.false_anchor_rate);
  const int num_background = cfg.false_anchor_rate > 0.0 ? background_count(layout) : 0;

  std::vector<Boxd> background_boxes;
  for (int b = 0; b < num_background; ++b) {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const Boxd box = random_box(cfg, layout);
      const bool clear = std::all_of(scene.ground_truth.begin(), scene.ground_truth.end(),
                                     [&](const GroundTruthObject& g) { return iou(box, g.box) < kBackgroundMaxIou; });
      if (clear) {
        background_boxes.push_back(box);
        break;
      }
    }
  }

  const Matrix4d noise_cov = noise_covariance(cfg);
  const Matrix4d noise_factor = cfg.noise > 0.0 ? Matrix4d(noise_cov.llt().matrixL()) : Matrix4d::Zero();
  const Matrix4d reported = reported_aleatoric_covariance(cfg);
  const auto kk = static_cast<Eigen::Index>(k);

  auto make_anchor = [&](std::int64_t anchor_id, const Boxd& center, std::size_t category, double sharpness) {
    Engine e(derive_seed(cfg.seed, {image_id, anchor_id}));
    std::normal_distribution<double> normal(0.0, 1.0);
    AnchorPredictiond p;
    p.anchor_id = anchor_id;
    p.box_samples.resize(cfg.runs, 4);
    p.logit_samples.resize(cfg.runs, kk);
    p.aleatoric_covs.assign(static_cast<std::size_t>(cfg.runs), reported);
    const Vector4d base = center.as_vector();
    for (int t = 0; t < cfg.runs; ++t) {
      Vector4d z;
      for (int i = 0; i < 4; ++i) z(i) = normal(e);
      p.box_samples.row(t) = (base + noise_factor * z).transpose();
      for (Eigen::Index c = 0; c < kk; ++c) {
        const double peak = static_cast<std::size_t>(c) == category ? sharpness : 0.0;
        p.logit_samples(t, c) = peak + cfg.logit_noise * normal(e);
      }
    }
    return p;
  };

  std::int64_t next_id = 0;
  for (std::size_t o = 0; o < scene.ground_truth.size(); ++o) {
    for (int a = 0; a < anchors_for[o]; ++a) {
      scene.predictions.push_back(
          make_anchor(next_id++, scene.ground_truth[o].box, scene.ground_truth[o].category_index, cfg.logit_sharpness));
      scene.provenance.emplace_back(o);
    }
  }
  for (const Boxd& box : background_boxes) {
    Engine pick(derive_seed(cfg.seed, {image_id, next_id, kSceneStream}));
    const std::size_t cat = foreground[static_cast<std::size_t>(uniform_int(pick, 0, static_cast<int>(foreground.size()) - 1))];
    scene.predictions.push_back(make_anchor(next_id++, box, cat, cfg.background_sharpness));
    scene.provenance.emplace_back(std::nullopt);
  }
  return scene;
}

std::vector<SyntheticScene> generate_dataset(const SceneConfig& cfg, unsigned threads) {
  cfg.validate();
  std::vector<SyntheticScene> scenes(static_cast<std::size_t>(cfg.num_images));
  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) scenes[i] = generate_scene(cfg, static_cast<std::int64_t>(i));
    return scenes;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < scenes.size(); i += threads)
        scenes[i] = generate_scene(cfg, static_cast<std::int64_t>(i));
    });
  for (auto& th : pool) th.join();
  return scenes;
}

std::string to_string(AleatoricModel m) {
  switch (m) {
    case AleatoricModel::faithful: return "faithful";
    case AleatoricModel::overconfident: return "overconfident";
    case AleatoricModel::underconfident: return "underconfident";
  }
  return "faithful";
}

void apply_setting(SceneConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "image_width") cfg.image_width = parse_int(key, v);
  else if (key == "image_height") cfg.image_height = parse_int(key, v);
  else if (key == "num_images") cfg.num_images = parse_int(key, v);
  else if (key == "objects_per_image") cfg.objects_per_image = parse_range<int>(key, v, parse_int);
  else if (key == "box_size") cfg.box_size = parse_range<double>(key, v, parse_double);
  else if (key == "anchors_per_object") cfg.anchors_per_object = parse_range<int>(key, v, parse_int);
  else if (key == "false_anchor_rate") cfg.false_anchor_rate = parse_double(key, v);
  else if (key == "noise") cfg.noise = parse_double(key, v);
  else if (key == "corner_correlation") cfg.corner_correlation = parse_double(key, v);
  else if (key == "logit_sharpness") cfg.logit_sharpness = parse_double(key, v);
  else if (key == "background_sharpness") cfg.background_sharpness = parse_double(key, v);
  else if (key == "logit_noise") cfg.logit_noise = parse_double(key, v);
  else if (key == "runs" || key == "T") cfg.runs = parse_int(key, v);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
  else if (key == "aleatoric_model") {
    if (v == "faithful") cfg.aleatoric_model = AleatoricModel::faithful;
    else if (v == "overconfident") cfg.aleatoric_model = AleatoricModel::overconfident;
    else if (v == "underconfident") cfg.aleatoric_model = AleatoricModel::underconfident;
    else throw ValidationError("unknown aleatoric_model '" + v + "'");
  } else if (key == "categories") {
    CategoryTable table;
    std::stringstream ss(v);
    std::string name;
    while (std::getline(ss, name, ',')) table.names.push_back(trim(name));
    table.background_index = cfg.categories.background_index;
    cfg.categories = table;
  } else if (key == "background_index") {
    if (v == "none" || v.empty()) cfg.categories.background_index.reset();
    else cfg.categories.background_index = static_cast<std::size_t>(parse_int(key, v));
  } else {
    throw ValidationError("unknown scene setting '" + key + "'");
  }
}

SceneConfig parse_scene_config(const std::string& text, SceneConfig base) {
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", number);
    try {
      apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), number);
    }
  }
  return base;
}

}  // namespace bayesod
