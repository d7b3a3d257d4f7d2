#include "bayesod/io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace bayesod {

using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kPredictionSchema = "bayesod.predictions";
constexpr const char* kDetectionSchema = "bayesod.detections";
constexpr const char* kGroundTruthSchema = "bayesod.groundtruth";

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string("cannot serialize non-finite ") + what);
}

Json vec_json(const auto& v, const char* what) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    require_finite(v(i), what);
    a.push_back(v(i));
  }
  return a;
}

Json categories_json(const CategoryTable& t) {
  Json names = Json::array();
  for (const auto& n : t.names) names.push_back(n);
  return names;
}

// Line-oriented reader that tracks the 1-based line number.
class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  bool next(Json& out) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out = Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line_);
      }
      if (!out.is_object()) throw ParseError("record is not a JSON object", line_);
      return true;
    }
    return false;
  }
  std::size_t line() const { return line_; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_); }

 private:
  std::istream& is_;
  std::size_t line_ = 0;
};

const Json& field(const LineReader& r, const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) r.fail(std::string("missing field '") + key + "'");
  return *it;
}

double number(const LineReader& r, const Json& j, const char* what) {
  if (!j.is_number()) r.fail(std::string("field '") + what + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) r.fail(std::string("field '") + what + "' must be finite");
  return v;
}

std::int64_t integer(const LineReader& r, const Json& j, const char* what) {
  if (!j.is_number_integer()) r.fail(std::string("field '") + what + "' must be an integer");
  return j.get<std::int64_t>();
}

std::vector<double> numbers(const LineReader& r, const Json& j, const char* what, std::size_t expected) {
  if (!j.is_array()) r.fail(std::string("field '") + what + "' must be an array");
  if (j.size() != expected)
    r.fail(std::string("field '") + what + "' has " + std::to_string(j.size()) + " values, expected " +
           std::to_string(expected));
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& x : j) out.push_back(number(r, x, what));
  return out;
}

std::vector<std::vector<double>> rows(const LineReader& r, const Json& j, const char* what, std::size_t count,
                                      std::size_t width) {
  if (!j.is_array()) r.fail(std::string("field '") + what + "' must be an array of arrays");
  if (j.size() != count)
    r.fail(std::string("field '") + what + "' has " + std::to_string(j.size()) + " rows, expected " +
           std::to_string(count));
  std::vector<std::vector<double>> out;
  for (const auto& row : j) out.push_back(numbers(r, row, what, width));
  return out;
}

VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct HeaderInfo {
  CategoryTable categories;
  std::size_t k = 0;
  std::size_t t = 0;
  Json raw;
};

HeaderInfo read_header(LineReader& r, const char* schema) {
  Json h;
  if (!r.next(h)) throw ParseError("empty file: missing header line", 1);
  if (h.value("type", "") != "header") r.fail("first line must be a header record");
  if (h.value("schema", "") != schema) r.fail(std::string("expected schema '") + schema + "'");
  if (!h.contains("version") || !h["version"].is_number_integer() || h["version"].get<int>() != kSchemaVersion)
    r.fail("schema version mismatch: expected " + std::to_string(kSchemaVersion));
  HeaderInfo info;
  info.raw = h;
  info.k = static_cast<std::size_t>(integer(r, field(r, h, "K"), "K"));
  if (h.contains("T")) info.t = static_cast<std::size_t>(integer(r, h["T"], "T"));
  const Json& names = field(r, h, "categories");
  if (!names.is_array()) r.fail("categories must be an array of names");
  for (const auto& n : names) {
    if (!n.is_string()) r.fail("category names must be strings");
    info.categories.names.push_back(n.get<std::string>());
  }
  if (h.contains("background_index") && !h["background_index"].is_null())
    info.categories.background_index = static_cast<std::size_t>(integer(r, h["background_index"], "background_index"));
  if (info.categories.size() != info.k) r.fail("header K disagrees with the category list");
  try {
    info.categories.validate();
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }
  return info;
}

Json header_json(const char* schema, const CategoryTable& categories, std::size_t runs) {
  Json h;
  h["type"] = "header";
  h["schema"] = schema;
  h["version"] = kSchemaVersion;
  h["K"] = categories.size();
  h["T"] = runs;
  h["categories"] = categories_json(categories);
  h["background_index"] = categories.background_index ? Json(*categories.background_index) : Json(nullptr);
  return h;
}

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open '" + path + "' for writing");
  fn(os);
  os.flush();
  if (!os) throw ValidationError("failed writing '" + path + "'");
}

template <typename Fn>
auto with_input(const std::string& path, Fn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open '" + path + "'");
  return fn(is);
}

Json threshold_json(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return t;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::array<double, 10> pack_upper(const Matrix4d& m) {
  std::array<double, 10> out{};
  std::size_t n = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) out[n++] = m(i, j);
  return out;
}

Matrix4d unpack_upper(std::span<const double> packed) {
  if (packed.size() != 10) throw ValidationError("packed covariance needs 10 values");
  Matrix4d m;
  std::size_t n = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) m(i, j) = m(j, i) = packed[n++];
  return m;
}

void write_predictions(std::ostream& os, const PredictionFile& file) {
  file.header.categories.validate();
  Json h = header_json(kPredictionSchema, file.header.categories, file.header.runs);
  h["cov_packing"] = file.header.packing == CovPacking::upper ? "upper" : "diagonal";
  os << h.dump() << '\n';
  for (const auto& rec : file.records) {
    const auto& a = rec.anchor;
    if (a.run_count() != file.header.runs || a.category_count() != file.header.categories.size() ||
        a.aleatoric_covs.size() != a.run_count())
      throw ValidationError("prediction record disagrees with the header K/T");
    Json j;
    j["image_id"] = rec.image_id;
    j["anchor_id"] = a.anchor_id;
    Json boxes = Json::array(), covs = Json::array(), logits = Json::array();
    for (Eigen::Index t = 0; t < a.box_samples.rows(); ++t) {
      boxes.push_back(vec_json(a.box_samples.row(t), "box sample"));
      logits.push_back(vec_json(a.logit_samples.row(t), "logit"));
      const Matrix4d& c = a.aleatoric_covs[static_cast<std::size_t>(t)];
      if (file.header.packing == CovPacking::upper) {
        const auto packed = pack_upper(c);
        covs.push_back(vec_json(Eigen::Map<const Eigen::Matrix<double, 10, 1>>(packed.data()), "covariance"));
      } else {
        covs.push_back(vec_json(c.diagonal(), "covariance"));
      }
    }
    j["box_samples"] = std::move(boxes);
    j["aleatoric_covs"] = std::move(covs);
    j["logits"] = std::move(logits);
    os << j.dump() << '\n';
  }
}

PredictionFile read_predictions(std::istream& is) {
  LineReader r(is);
  const HeaderInfo info = read_header(r, kPredictionSchema);
  PredictionFile file;
  file.header.categories = info.categories;
  file.header.runs = info.t;
  if (info.t < 1) r.fail("prediction header needs T >= 1");
  const std::string packing = info.raw.value("cov_packing", "upper");
  if (packing == "upper") file.header.packing = CovPacking::upper;
  else if (packing == "diagonal") file.header.packing = CovPacking::diagonal;
  else r.fail("unknown cov_packing '" + packing + "'");
  const std::size_t width = file.header.packing == CovPacking::upper ? 10 : 4;

  Json j;
  while (r.next(j)) {
    PredictionRecord rec;
    rec.image_id = integer(r, field(r, j, "image_id"), "image_id");
    auto& a = rec.anchor;
    a.anchor_id = integer(r, field(r, j, "anchor_id"), "anchor_id");
    const auto boxes = rows(r, field(r, j, "box_samples"), "box_samples", info.t, 4);
    const auto covs = rows(r, field(r, j, "aleatoric_covs"), "aleatoric_covs", info.t, width);
    const auto logits = rows(r, field(r, j, "logits"), "logits", info.t, info.k);
    const auto t_rows = static_cast<Eigen::Index>(info.t);
    a.box_samples.resize(t_rows, 4);
    a.logit_samples.resize(t_rows, static_cast<Eigen::Index>(info.k));
    for (Eigen::Index t = 0; t < t_rows; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      for (int c = 0; c < 4; ++c) a.box_samples(t, c) = boxes[ts][static_cast<std::size_t>(c)];
      for (std::size_t c = 0; c < info.k; ++c) a.logit_samples(t, static_cast<Eigen::Index>(c)) = logits[ts][c];
      a.aleatoric_covs.push_back(width == 10 ? unpack_upper(covs[ts])
                                              : Matrix4d(to_vector(covs[ts]).asDiagonal()));
    }
    file.records.push_back(std::move(rec));
  }
  return file;
}

void write_detections(std::ostream& os, const DetectionFile& file) {
  file.categories.validate();
  os << header_json(kDetectionSchema, file.categories, file.runs).dump() << '\n';
  for (const auto& d : file.detections) {
    if (d.category.size() != file.categories.size() || d.dirichlet.size() != file.categories.size())
      throw ValidationError("detection record disagrees with the header K");
    Json j;
    j["image_id"] = d.image_id;
    j["box_mean"] = vec_json(d.box.mean, "box mean");
    const auto packed = pack_upper(d.box.cov);
    j["box_cov"] = vec_json(Eigen::Map<const Eigen::Matrix<double, 10, 1>>(packed.data()), "box covariance");
    j["category_probs"] = vec_json(d.category.probs, "category probability");
    j["dirichlet_alpha"] = vec_json(d.dirichlet.alpha, "dirichlet alpha");
    require_finite(d.score, "score");
    require_finite(d.gaussian_entropy, "gaussian entropy");
    require_finite(d.categorical_entropy, "categorical entropy");
    j["score"] = d.score;
    j["gaussian_entropy"] = d.gaussian_entropy;
    j["categorical_entropy"] = d.categorical_entropy;
    j["member_anchor_ids"] = d.member_anchor_ids;
    os << j.dump() << '\n';
  }
}

DetectionFile read_detections(std::istream& is) {
  LineReader r(is);
  const HeaderInfo info = read_header(r, kDetectionSchema);
  DetectionFile file;
  file.categories = info.categories;
  file.runs = info.t;
  Json j;
  while (r.next(j)) {
    FinalDetection d;
    d.image_id = integer(r, field(r, j, "image_id"), "image_id");
    d.box.mean = to_vector(numbers(r, field(r, j, "box_mean"), "box_mean", 4));
    d.box.cov = unpack_upper(numbers(r, field(r, j, "box_cov"), "box_cov", 10));
    d.category.probs = to_vector(numbers(r, field(r, j, "category_probs"), "category_probs", info.k));
    d.dirichlet.alpha = to_vector(numbers(r, field(r, j, "dirichlet_alpha"), "dirichlet_alpha", info.k));
    d.score = number(r, field(r, j, "score"), "score");
    d.gaussian_entropy = number(r, field(r, j, "gaussian_entropy"), "gaussian_entropy");
    d.categorical_entropy = number(r, field(r, j, "categorical_entropy"), "categorical_entropy");
    const Json& ids = field(r, j, "member_anchor_ids");
    if (!ids.is_array()) r.fail("member_anchor_ids must be an array");
    for (const auto& id : ids) d.member_anchor_ids.push_back(integer(r, id, "member_anchor_ids"));

    try {
      validate(d.box);
      validate(d.category);
      validate(d.dirichlet);
    } catch (const std::exception& e) {
      r.fail(e.what());
    }
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
    if (!close(d.score, foreground_score(d.category, info.categories.background_index)))
      r.fail("score is not the maximum foreground probability");
    if (!close(d.gaussian_entropy, gaussian_entropy(d.box)))
      r.fail("gaussian_entropy disagrees with the box covariance");
    if (!close(d.categorical_entropy, categorical_entropy(d.category)))
      r.fail("categorical_entropy disagrees with the category probabilities");
    file.detections.push_back(std::move(d));
  }
  return file;
}

void write_ground_truth(std::ostream& os, const GroundTruthFile& file) {
  file.categories.validate();
  Json h = header_json(kGroundTruthSchema, file.categories, 0);
  h.erase("T");
  h["num_images"] = file.num_images;
  if (file.image_size) {
    h["image_width"] = file.image_size->width;
    h["image_height"] = file.image_size->height;
  }
  os << h.dump() << '\n';
  for (const auto& g : file.objects) {
    validate(g.box);
    if (g.category_index >= file.categories.size()) throw ValidationError("ground truth category out of range");
    Json j;
    j["image_id"] = g.image_id;
    j["box"] = vec_json(g.box.as_vector(), "box");
    j["category_index"] = g.category_index;
    os << j.dump() << '\n';
  }
}

GroundTruthFile read_ground_truth(std::istream& is) {
  LineReader r(is);
  const HeaderInfo info = read_header(r, kGroundTruthSchema);
  GroundTruthFile file;
  file.categories = info.categories;
  if (info.raw.contains("num_images"))
    file.num_images = static_cast<std::size_t>(integer(r, info.raw["num_images"], "num_images"));
  if (info.raw.contains("image_width") && info.raw.contains("image_height"))
    file.image_size = ImageSize{static_cast<int>(integer(r, info.raw["image_width"], "image_width")),
                                static_cast<int>(integer(r, info.raw["image_height"], "image_height"))};
  Json j;
  while (r.next(j)) {
    GroundTruthObject g;
    g.image_id = integer(r, field(r, j, "image_id"), "image_id");
    g.box = Boxd::from_vector(to_vector(numbers(r, field(r, j, "box"), "box", 4)));
    const std::int64_t c = integer(r, field(r, j, "category_index"), "category_index");
    if (c < 0 || static_cast<std::size_t>(c) >= info.k) r.fail("category_index out of range");
    g.category_index = static_cast<std::size_t>(c);
    if (!g.box.valid()) r.fail("invalid ground truth box");
    file.objects.push_back(g);
  }
  return file;
}

void save_predictions(const std::string& path, const PredictionFile& file) {
  with_output(path, [&](std::ostream& os) { write_predictions(os, file); });
}
PredictionFile load_predictions(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_predictions(is); });
}
void save_detections(const std::string& path, const DetectionFile& file) {
  with_output(path, [&](std::ostream& os) { write_detections(os, file); });
}
DetectionFile load_detections(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_detections(is); });
}
void save_ground_truth(const std::string& path, const GroundTruthFile& file) {
  with_output(path, [&](std::ostream& os) { write_ground_truth(os, file); });
}
GroundTruthFile load_ground_truth(const std::string& path) {
  return with_input(path, [](std::istream& is) { return read_ground_truth(is); });
}

std::vector<LossSampled> read_loss_samples(std::istream& is) {
  LineReader r(is);
  std::vector<LossSampled> out;
  Json j;
  while (r.next(j)) {
    if (j.value("type", "") == "header") continue;
    LossSampled s;
    s.prediction = to_vector(numbers(r, field(r, j, "prediction"), "prediction", 4));
    s.target = to_vector(numbers(r, field(r, j, "target"), "target", 4));
    if (j.contains("variance")) s.variance = to_vector(numbers(r, j["variance"], "variance", 4));
    if (j.contains("l_strict") || j.contains("log_d")) {
      LdlFactorsd f;
      f.l_strict = to_vector(numbers(r, field(r, j, "l_strict"), "l_strict", 6));
      f.log_d = to_vector(numbers(r, field(r, j, "log_d"), "log_d", 4));
      s.factors = f;
    }
    if (!s.variance && !s.factors) r.fail("loss sample needs 'variance' or 'l_strict'/'log_d'");
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<BoxPriord, std::optional<DirichletStated>> load_prior(const std::string& path, std::size_t categories) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed prior file: ") + e.what());
  }
  std::istringstream no_lines;
  const LineReader doc(no_lines);
  std::pair<BoxPriord, std::optional<DirichletStated>> out{BoxPriord::non_informative(), std::nullopt};
  if (j.contains("box") && !(j["box"].is_string() && j["box"] == "noninformative")) {
    const Json& b = j["box"];
    const auto mean = numbers(doc, field(doc, b, "mean"), "box.mean", 4);
    const auto cov = numbers(doc, field(doc, b, "cov"), "box.cov", 10);
    out.first = BoxPriord::gaussian(to_vector(mean), unpack_upper(cov));
    if (!is_positive_definite(out.first.cov)) throw ValidationError("prior covariance is not positive definite");
  }
  if (j.contains("alpha")) {
    out.second = DirichletStated{to_vector(numbers(doc, j["alpha"], "alpha", categories))};
    validate(*out.second);
  }
  return out;
}

std::string report_to_json(const EvalReport& report, const MetricSelection& metrics, double iou_threshold) {
  Json j;
  j["schema"] = "bayesod.eval_report";
  j["version"] = kSchemaVersion;
  j["iou_threshold"] = iou_threshold;
  Json selected = Json::array();
  if (metrics.map) selected.push_back("map");
  if (metrics.mue) selected.push_back("mue");
  if (metrics.pdq) selected.push_back("pdq");
  j["metrics"] = selected;
  j["mAP"] = optional_json(report.map);
  j["mGMUE"] = optional_json(report.mgmue);
  j["mCMUE"] = optional_json(report.mcmue);
  j["PDQ"] = report.pdq ? Json(report.pdq->score) : Json(nullptr);
  if (report.pdq) {
    j["pdq_definition"] = "PDQ (per cited definition)";
    j["pdq_details"] = {{"true_positives", report.pdq->true_positives},
                        {"false_positives", report.pdq->false_positives},
                        {"false_negatives", report.pdq->false_negatives},
                        {"mean_spatial_quality", report.pdq->mean_spatial},
                        {"mean_label_quality", report.pdq->mean_label}};
  }
  Json cats = Json::array();
  for (const auto& c : report.categories) {
    Json cj;
    cj["index"] = c.category;
    cj["name"] = c.name;
    cj["num_gt"] = c.num_gt;
    cj["num_detections"] = c.num_detections;
    cj["num_tp"] = c.num_tp;
    cj["num_fp"] = c.num_fp;
    cj["ap"] = optional_json(c.ap);
    cj["gmue"] = c.gmue ? Json(c.gmue->mue) : Json(nullptr);
    cj["gmue_threshold"] = c.gmue ? threshold_json(c.gmue->threshold) : Json(nullptr);
    cj["cmue"] = c.cmue ? Json(c.cmue->mue) : Json(nullptr);
    cj["cmue_threshold"] = c.cmue ? threshold_json(c.cmue->threshold) : Json(nullptr);
    cats.push_back(std::move(cj));
  }
  j["categories"] = std::move(cats);
  j["notices"] = report.notices;
  return j.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace bayesod
