#include "bayesod/cli.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "bayesod/io.hpp"
#include "bayesod/render.hpp"
#include "bayesod/synth_detector.hpp"
#include "json.hpp"

namespace bayesod {

namespace {

struct SimulateArgs {
  std::string config, out, gt;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_images;
  std::vector<std::string> settings;
  std::string packing = "upper";
  unsigned threads = 1;
};

struct FuseArgs {
  std::string preds, out, log;
  std::string mode = "bayesod", covariance = "full", epistemic = "on", aleatoric = "on";
  double affinity = 0.5, score_threshold = 0.1;
  std::string cat_counts = "expected";
  int cat_samples = 30;
  std::uint64_t seed = 0;
  std::string prior = "noninformative";
  unsigned threads = 1;
};

struct EvalArgs {
  std::string dets, gt, out, metrics = "map,mue,pdq", image_size;
  double iou = 0.5;
  unsigned threads = 1;
};

struct LossArgs {
  std::string samples, loss = "mv", out;
  bool grad_check = false;
  double step = 1e-5;
};

struct RenderArgs {
  std::string dets, image_size, out, thresholds;
  unsigned threads = 1;
};

ImageSize parse_image_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x != std::string::npos) {
      std::size_t a = 0, b = 0;
      const int w = std::stoi(s.substr(0, x), &a);
      const int h = std::stoi(s.substr(x + 1), &b);
      if (a == x && b == s.size() - x - 1 && w > 0 && h > 0) return {w, h};
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("image size must look like WIDTHxHEIGHT, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

int run_simulate(const SimulateArgs& a, std::ostream& out) {
  SceneConfig cfg;
  if (!a.config.empty()) cfg = parse_scene_config(read_text_file(a.config));
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.num_images) cfg.num_images = *a.num_images;
  cfg.validate();

  const auto scenes = generate_dataset(cfg, a.threads);
  PredictionFile preds;
  preds.header.categories = cfg.categories;
  preds.header.runs = static_cast<std::size_t>(cfg.runs);
  preds.header.packing = a.packing == "diagonal" ? CovPacking::diagonal : CovPacking::upper;
  GroundTruthFile gt;
  gt.categories = cfg.categories;
  gt.image_size = ImageSize{cfg.image_width, cfg.image_height};
  gt.num_images = scenes.size();
  std::size_t anchors = 0;
  for (const auto& s : scenes) {
    for (const auto& p : s.predictions) preds.records.push_back({s.image_id, p});
    gt.objects.insert(gt.objects.end(), s.ground_truth.begin(), s.ground_truth.end());
    anchors += s.predictions.size();
  }
  save_predictions(a.out, preds);
  save_ground_truth(a.gt, gt);
  out << "simulated " << scenes.size() << " images, " << gt.objects.size() << " objects, " << anchors
      << " anchors\n";
  return kExitSuccess;
}

FusionConfig fusion_config(const FuseArgs& a, const PredictionHeader& header) {
  FusionConfig cfg;
  cfg.mode = a.mode == "nms" ? FusionMode::nms : FusionMode::bayesod;
  cfg.covariance = a.covariance == "diagonal" ? CovarianceMode::diagonal : CovarianceMode::full;
  cfg.epistemic = a.epistemic == "on";
  cfg.aleatoric = a.aleatoric == "on";
  cfg.affinity_threshold = a.affinity;
  cfg.score_threshold = a.score_threshold;
  cfg.counts.mode = a.cat_counts == "sampled" ? CountMode::sampled : CountMode::expected;
  cfg.counts.samples = a.cat_samples;
  cfg.counts.seed = a.seed;
  cfg.background_index = header.categories.background_index;
  cfg.expected_runs = header.runs;
  if (a.prior != "noninformative") {
    auto [box, alpha] = load_prior(a.prior, header.categories.size());
    cfg.box_prior = box;
    cfg.dirichlet_prior = alpha;
  }
  cfg.validate();
  return cfg;
}

int run_fuse(const FuseArgs& a, std::ostream& out, std::ostream& err) {
  if (a.epistemic == "off" && a.aleatoric == "off") {
    err << "error: --epistemic off and --aleatoric off together leave no uncertainty source\n";
    return kExitUsage;
  }
  const PredictionFile preds = load_predictions(a.preds);
  const FusionConfig cfg = fusion_config(a, preds.header);

  std::map<std::int64_t, std::vector<AnchorPredictiond>> images;
  for (const auto& r : preds.records) images[r.image_id].push_back(r.anchor);
  std::vector<std::int64_t> ids;
  for (const auto& [id, _] : images) ids.push_back(id);

  std::vector<InferenceResult> results(ids.size());
  std::vector<std::exception_ptr> failures(ids.size());
  auto work = [&](std::size_t i) {
    try {
      results[i] = bayesod_inference(images.at(ids[i]), cfg, ids[i]);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(a.threads, static_cast<unsigned>(std::max<std::size_t>(ids.size(), 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < ids.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < ids.size(); i += threads) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      err << "error: image " << ids[i] << ": " << e.what() << '\n';
      throw;
    }
  }

  DetectionFile dets;
  dets.categories = preds.header.categories;
  dets.runs = preds.header.runs;
  std::ostringstream log;
  std::size_t warnings = 0;
  for (auto& r : results) {
    for (auto& d : r.detections) dets.detections.push_back(std::move(d));
    for (const auto& w : r.warnings) {
      nlohmann::ordered_json j;
      j["image_id"] = w.image_id;
      j["anchor_id"] = w.anchor_id;
      j["warning"] = w.message;
      log << j.dump() << '\n';
      ++warnings;
    }
  }
  save_detections(a.out, dets);
  const std::string log_path = a.log.empty() ? a.out + ".warnings.jsonl" : a.log;
  std::ofstream(log_path, std::ios::binary) << log.str();
  out << "fused " << ids.size() << " images into " << dets.detections.size() << " detections";
  if (warnings) out << " (" << warnings << " warnings in " << log_path << ")";
  out << '\n';
  return kExitSuccess;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const DetectionFile dets = load_detections(a.dets);
  const GroundTruthFile gt = load_ground_truth(a.gt);
  if (dets.categories.names != gt.categories.names)
    throw ValidationError("detection and ground truth category lists differ");
  EvalOptions opts;
  opts.metrics = {false, false, false};
  for (const auto& m : split(a.metrics, ',')) {
    if (m == "map") opts.metrics.map = true;
    else if (m == "mue") opts.metrics.mue = true;
    else if (m == "pdq") opts.metrics.pdq = true;
    else throw ValidationError("unknown metric '" + m + "' (choose from map, mue, pdq)");
  }
  opts.iou_threshold = a.iou;
  opts.threads = a.threads;
  opts.default_image_size = a.image_size.empty() ? gt.image_size : std::optional(parse_image_size(a.image_size));
  CategoryTable table = gt.categories;
  const EvalReport report = evaluate(dets.detections, gt.objects, table, opts);
  const std::string json = report_to_json(report, opts.metrics, opts.iou_threshold);
  if (a.out.empty()) {
    out << json;
  } else {
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw ValidationError("cannot write '" + a.out + "'");
    os << json;
  }
  return kExitSuccess;
}

int run_loss_check(const LossArgs& a, std::ostream& out) {
  const auto samples = [&] {
    std::ifstream is(a.samples, std::ios::binary);
    if (!is) throw ValidationError("cannot open '" + a.samples + "'");
    return read_loss_samples(is);
  }();
  const LossKind kind = a.loss == "diag" ? LossKind::diag : a.loss == "mv" ? LossKind::mv : LossKind::surrogate;
  std::ostringstream body;
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    nlohmann::ordered_json j;
    j["index"] = i;
    j["loss"] = a.loss;
    j["value"] = evaluate_loss(kind, samples[i]);
    if (a.grad_check) {
      const double e = grad_check(kind, samples[i], a.step);
      j["grad_check_max_rel_err"] = e;
      worst = std::max(worst, e);
    }
    body << j.dump() << '\n';
  }
  if (a.grad_check) {
    nlohmann::ordered_json s;
    s["summary"] = true;
    s["samples"] = samples.size();
    s["step"] = a.step;
    s["max_rel_err"] = worst;
    body << s.dump() << '\n';
  }
  if (a.out.empty()) {
    out << body.str();
  } else {
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw ValidationError("cannot write '" + a.out + "'");
    os << body.str();
  }
  return kExitSuccess;
}

int run_render(const RenderArgs& a, std::ostream& out) {
  const auto t = split(a.thresholds, ',');
  if (t.size() != 2) throw ValidationError("--entropy-thresholds expects two values t1,t2");
  const double low = std::stod(t[0]), high = std::stod(t[1]);
  const DetectionFile dets = load_detections(a.dets);
  const auto paths = render_directory(dets.detections, parse_image_size(a.image_size), a.out, low, high, a.threads);
  out << "rendered " << paths.size() << " images into " << a.out << '\n';
  return kExitSuccess;
}

}  // namespace

int cli_main(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian detection fusion, evaluation and simulation toolkit", "bayesod"};
  app.require_subcommand(1);
  const auto on_off = CLI::IsMember({"on", "off"});

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a seeded synthetic detector corpus");
  simulate->add_option("--config", sim.config, "Flat key=value scene config file");
  simulate->add_option("--out", sim.out, "Predictions JSON-Lines output")->required();
  simulate->add_option("--gt", sim.gt, "Ground truth JSON-Lines output")->required();
  simulate->add_option("--seed", sim.seed, "Override the config seed");
  simulate->add_option("--num-images", sim.num_images, "Override the image count");
  simulate->add_option("--set", sim.settings, "Config override key=value (repeatable)");
  simulate->add_option("--cov-packing", sim.packing, "Aleatoric covariance packing")
      ->check(CLI::IsMember({"upper", "diagonal"}));
  simulate->add_option("--threads", sim.threads, "Worker threads")->check(CLI::PositiveNumber);

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Fuse per-anchor predictions into detections");
  fuse->add_option("--preds", fu.preds, "Predictions JSON-Lines input")->required();
  fuse->add_option("--out", fu.out, "Detections JSON-Lines output")->required();
  fuse->add_option("--mode", fu.mode)->check(CLI::IsMember({"bayesod", "nms"}));
  fuse->add_option("--covariance", fu.covariance)->check(CLI::IsMember({"full", "diagonal"}));
  fuse->add_option("--epistemic", fu.epistemic)->check(on_off);
  fuse->add_option("--aleatoric", fu.aleatoric)->check(on_off);
  fuse->add_option("--affinity-iou", fu.affinity)->check(CLI::Range(0.0, 1.0));
  fuse->add_option("--score-threshold", fu.score_threshold)->check(CLI::Range(0.0, 1.0));
  fuse->add_option("--cat-counts", fu.cat_counts)->check(CLI::IsMember({"expected", "sampled"}));
  fuse->add_option("--cat-samples", fu.cat_samples)->check(CLI::PositiveNumber);
  fuse->add_option("--seed", fu.seed);
  fuse->add_option("--prior", fu.prior, "'noninformative' or a prior JSON file");
  fuse->add_option("--log", fu.log, "Warning sidecar (default <out>.warnings.jsonl)");
  fuse->add_option("--threads", fu.threads)->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth");
  eval->add_option("--dets", ev.dets)->required();
  eval->add_option("--gt", ev.gt)->required();
  eval->add_option("--metrics", ev.metrics, "Subset of map,mue,pdq");
  eval->add_option("--out", ev.out, "Report JSON (stdout if omitted)");
  eval->add_option("--iou-threshold", ev.iou)->check(CLI::Range(0.0, 1.0));
  eval->add_option("--image-size", ev.image_size, "WIDTHxHEIGHT for PDQ clipping");
  eval->add_option("--threads", ev.threads)->check(CLI::PositiveNumber);

  LossArgs lo;
  auto* loss = app.add_subcommand("loss-check", "Evaluate regression losses and check their gradients");
  loss->add_option("--samples", lo.samples)->required();
  loss->add_option("--loss", lo.loss)->check(CLI::IsMember({"diag", "mv", "surrogate"}));
  loss->add_flag("--grad-check", lo.grad_check);
  loss->add_option("--step", lo.step)->check(CLI::PositiveNumber);
  loss->add_option("--out", lo.out);

  RenderArgs re;
  auto* render = app.add_subcommand("render", "Draw detections with corner confidence ellipses as SVG");
  render->add_option("--dets", re.dets)->required();
  render->add_option("--image-size", re.image_size)->required();
  render->add_option("--out", re.out, "Output directory")->required();
  render->add_option("--entropy-thresholds", re.thresholds, "t1,t2 Gaussian entropy band edges")->required();
  render->add_option("--threads", re.threads)->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim, out);
    if (fuse->parsed()) return run_fuse(fu, out, err);
    if (eval->parsed()) return run_eval(ev, out);
    if (loss->parsed()) return run_loss_check(lo, out);
    if (render->parsed()) return run_render(re, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace bayesod
