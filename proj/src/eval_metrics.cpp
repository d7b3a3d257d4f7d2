#include "bayesod/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

namespace bayesod {

namespace {

constexpr double kLogFloor = 1e-14;
constexpr double kWindowSigmas = 6.0;

// Total order on detections: score descending, then image, then box mean.
bool ranks_before(const FinalDetection& a, const FinalDetection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  for (int i = 0; i < 4; ++i)
    if (a.box.mean(i) != b.box.mean(i)) return a.box.mean(i) < b.box.mean(i);
  return false;
}

std::vector<std::size_t> ranked(std::span<const FinalDetection> dets, std::vector<std::size_t> idx) {
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });
  return idx;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

std::size_t detection_category(const FinalDetection& det, std::optional<std::size_t> background) {
  return foreground_argmax(det.category, background);
}

std::vector<MatchRecord> match_detections(std::span<const FinalDetection> dets,
                                          std::span<const GroundTruthObject> gts, double iou_threshold,
                                          std::optional<std::size_t> background) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ValidationError("IoU threshold must lie in (0,1)");
  std::vector<MatchRecord> out(dets.size());
  std::map<std::pair<std::int64_t, std::size_t>, std::vector<std::size_t>> gt_groups;
  for (std::size_t g = 0; g < gts.size(); ++g) gt_groups[{gts[g].image_id, gts[g].category_index}].push_back(g);

  std::vector<std::size_t> all(dets.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<bool> gt_taken(gts.size(), false);
  for (const std::size_t d : ranked(dets, all)) {
    MatchRecord& rec = out[d];
    rec.detection = d;
    rec.category = detection_category(dets[d], background);
    const auto it = gt_groups.find({dets[d].image_id, rec.category});
    if (it == gt_groups.end()) continue;
    const Boxd box = dets[d].box.box();
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (const std::size_t g : it->second) {
      const double v = iou(box, gts[g].box);
      rec.iou_at_match = std::max(rec.iou_at_match, v);
      if (gt_taken[g]) continue;
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt && best >= iou_threshold) {
      gt_taken[*best_gt] = true;
      rec.matched = true;
      rec.matched_gt = best_gt;
      rec.iou_at_match = best;
    }
  }
  return out;
}

double average_precision(const std::vector<bool>& ranked_true_positive, std::size_t num_gt) {
  if (num_gt == 0) throw ValidationError("average precision is undefined without ground truth");
  const std::size_t n = ranked_true_positive.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_true_positive[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Precision envelope, then area under the step function at recall changes.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return 100.0 * ap;
}

MueResult minimum_uncertainty_error(std::span<const double> tp_entropies,
                                    std::span<const double> fp_entropies) {
  if (tp_entropies.empty() || fp_entropies.empty())
    throw ValidationError("uncertainty error needs at least one true and one false positive");
  std::vector<double> tp(tp_entropies.begin(), tp_entropies.end());
  std::vector<double> fp(fp_entropies.begin(), fp_entropies.end());
  std::sort(tp.begin(), tp.end());
  std::sort(fp.begin(), fp.end());

  std::vector<double> candidates;
  candidates.reserve(tp.size() + fp.size() + 2);
  candidates.push_back(-std::numeric_limits<double>::infinity());
  candidates.insert(candidates.end(), tp.begin(), tp.end());
  candidates.insert(candidates.end(), fp.begin(), fp.end());
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const double ntp = static_cast<double>(tp.size());
  const double nfp = static_cast<double>(fp.size());
  MueResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (const double t : candidates) {
    const auto tp_above = static_cast<double>(tp.end() - std::upper_bound(tp.begin(), tp.end(), t));
    const auto fp_below = static_cast<double>(std::upper_bound(fp.begin(), fp.end(), t) - fp.begin());
    const double ue = 100.0 * (0.5 * tp_above / ntp + 0.5 * fp_below / nfp);
    if (ue < best.mue) best = {ue, t};
  }
  return best;
}

double pixel_inside_probability(const BoxGaussiand& box, double cx, double cy) {
  const auto& m = box.mean;
  const Vector4d sd = box.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  auto right_of = [](double x, double mu, double s) {
    if (s <= 0.0) return x > mu ? 1.0 : (x == mu ? 0.5 : 0.0);
    return normal_cdf((x - mu) / s);
  };
  return right_of(cx, m(0), sd(0)) * right_of(cy, m(1), sd(1)) * right_of(m(2), cx, sd(2)) *
         right_of(m(3), cy, sd(3));
}

PdqPair pairwise_pdq(const FinalDetection& det, const GroundTruthObject& gt, std::optional<ImageSize> image) {
  PdqPair pair;
  if (gt.category_index < static_cast<std::size_t>(det.category.probs.size()))
    pair.label = det.category.probs(static_cast<Eigen::Index>(gt.category_index));

  const Vector4d sd = det.box.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const auto& m = det.box.mean;
  double wx0 = std::min({m(0) - kWindowSigmas * sd(0), m(2) - kWindowSigmas * sd(2), gt.box.x1});
  double wy0 = std::min({m(1) - kWindowSigmas * sd(1), m(3) - kWindowSigmas * sd(3), gt.box.y1});
  double wx1 = std::max({m(0) + kWindowSigmas * sd(0), m(2) + kWindowSigmas * sd(2), gt.box.x2});
  double wy1 = std::max({m(1) + kWindowSigmas * sd(1), m(3) + kWindowSigmas * sd(3), gt.box.y2});
  if (image) {
    wx0 = std::max(wx0, 0.0);
    wy0 = std::max(wy0, 0.0);
    wx1 = std::min(wx1, static_cast<double>(image->width));
    wy1 = std::min(wy1, static_cast<double>(image->height));
  }
  // Pixel u covers [u, u+1); its centre is u + 0.5.
  const auto u0 = static_cast<long>(std::floor(wx0)), u1 = static_cast<long>(std::ceil(wx1));
  const auto v0 = static_cast<long>(std::floor(wy0)), v1 = static_cast<long>(std::ceil(wy1));
  auto in_gt = [&](double cx, double cy) {
    return cx >= gt.box.x1 && cx <= gt.box.x2 && cy >= gt.box.y1 && cy <= gt.box.y2;
  };

  double fg = 0.0, bg = 0.0;
  std::size_t gt_pixels = 0;
  for (long v = v0; v < v1; ++v) {
    const double cy = static_cast<double>(v) + 0.5;
    for (long u = u0; u < u1; ++u) {
      const double cx = static_cast<double>(u) + 0.5;
      const double p = pixel_inside_probability(det.box, cx, cy);
      if (in_gt(cx, cy)) {
        fg += std::log(p + kLogFloor);
        ++gt_pixels;
      } else if (p > 0.0) {
        bg += std::log(1.0 - p + kLogFloor);
      }
    }
  }
  if (gt_pixels == 0) return pair;
  pair.spatial = std::exp((fg + bg) / static_cast<double>(gt_pixels));
  pair.quality = std::sqrt(pair.spatial * pair.label);
  return pair;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  if (rows == 0) return {};
  const std::size_t cols = weight.front().size();
  if (cols == 0) return std::vector<int>(rows, -1);
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows, m = transposed ? rows : cols;
  auto cost = [&](std::size_t i, std::size_t j) {
    return transposed ? -weight[j - 1][i - 1] : -weight[i - 1][j - 1];
  };
  // Shortest augmenting path Hungarian algorithm, 1-based, n <= m.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> result(rows, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (transposed)
      result[j - 1] = static_cast<int>(p[j] - 1);
    else
      result[p[j] - 1] = static_cast<int>(j - 1);
  }
  return result;
}

PdqSummary pdq_score(std::span<const FinalDetection> dets, std::span<const GroundTruthObject> gts,
                     const std::map<std::int64_t, ImageSize>& image_sizes, std::optional<ImageSize> default_size,
                     unsigned threads) {
  std::map<std::int64_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> images;
  for (std::size_t d = 0; d < dets.size(); ++d) images[dets[d].image_id].first.push_back(d);
  for (std::size_t g = 0; g < gts.size(); ++g) images[gts[g].image_id].second.push_back(g);
  std::vector<std::int64_t> ids;
  for (const auto& [id, _] : images) ids.push_back(id);

  struct ImageTally {
    double quality = 0.0, spatial = 0.0, label = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::vector<ImageTally> tallies(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t i) {
    const auto& [det_idx, gt_idx] = images.at(ids[i]);
    std::optional<ImageSize> size = default_size;
    if (const auto it = image_sizes.find(ids[i]); it != image_sizes.end()) size = it->second;
    ImageTally t;
    std::vector<std::vector<PdqPair>> pairs(gt_idx.size(), std::vector<PdqPair>(det_idx.size()));
    std::vector<std::vector<double>> weight(gt_idx.size(), std::vector<double>(det_idx.size(), 0.0));
    for (std::size_t g = 0; g < gt_idx.size(); ++g)
      for (std::size_t d = 0; d < det_idx.size(); ++d) {
        pairs[g][d] = pairwise_pdq(dets[det_idx[d]], gts[gt_idx[g]], size);
        weight[g][d] = pairs[g][d].quality;
      }
    const auto assignment = max_weight_assignment(weight);
    std::vector<bool> det_used(det_idx.size(), false);
    for (std::size_t g = 0; g < gt_idx.size(); ++g) {
      const int d = assignment.empty() ? -1 : assignment[g];
      if (d < 0) {
        ++t.fn;
        continue;
      }
      det_used[static_cast<std::size_t>(d)] = true;
      const PdqPair& pr = pairs[g][static_cast<std::size_t>(d)];
      if (pr.quality > 0.0) {
        ++t.tp;
        t.quality += pr.quality;
        t.spatial += pr.spatial;
        t.label += pr.label;
      } else {
        ++t.fn;
        ++t.fp;
      }
    }
    for (const bool used : det_used)
      if (!used) ++t.fp;
    tallies[i] = t;
  });

  PdqSummary s;
  double quality = 0.0, spatial = 0.0, label = 0.0;
  for (const auto& t : tallies) {
    quality += t.quality;
    spatial += t.spatial;
    label += t.label;
    s.true_positives += t.tp;
    s.false_positives += t.fp;
    s.false_negatives += t.fn;
  }
  const std::size_t denom = s.true_positives + s.false_positives + s.false_negatives;
  s.score = denom ? 100.0 * quality / static_cast<double>(denom) : 0.0;
  if (s.true_positives) {
    s.mean_spatial = spatial / static_cast<double>(s.true_positives);
    s.mean_label = label / static_cast<double>(s.true_positives);
  }
  return s;
}

EvalReport evaluate(std::span<const FinalDetection> dets, std::span<const GroundTruthObject> gts,
                    const CategoryTable& categories, const EvalOptions& options) {
  categories.validate();
  const std::size_t k = categories.size();
  for (const auto& g : gts) {
    validate(g.box);
    if (g.category_index >= k) throw ValidationError("ground truth category index out of range");
  }
  for (const auto& d : dets)
    if (d.category.size() != k) throw ValidationError("detection category count disagrees with the table");

  EvalReport report;
  const auto matches = match_detections(dets, gts, options.iou_threshold, categories.background_index);

  std::vector<std::vector<std::size_t>> per_category(k);
  for (const auto& m : matches) per_category[m.category].push_back(m.detection);
  std::vector<std::size_t> gt_count(k, 0);
  for (const auto& g : gts) ++gt_count[g.category_index];

  std::vector<double> aps, gmues, cmues;
  for (std::size_t c = 0; c < k; ++c) {
    if (categories.background_index && c == *categories.background_index) continue;
    CategoryMetrics cm;
    cm.category = c;
    cm.name = categories.names[c];
    cm.num_gt = gt_count[c];
    cm.num_detections = per_category[c].size();
    const auto order = ranked(dets, per_category[c]);
    std::vector<bool> flags;
    std::vector<double> tp_g, fp_g, tp_c, fp_c;
    for (const std::size_t d : order) {
      const bool tp = matches[d].matched;
      flags.push_back(tp);
      (tp ? cm.num_tp : cm.num_fp)++;
      (tp ? tp_g : fp_g).push_back(dets[d].gaussian_entropy);
      (tp ? tp_c : fp_c).push_back(dets[d].categorical_entropy);
    }

    if (cm.num_gt == 0) {
      if (cm.num_detections)
        report.notices.push_back("category '" + cm.name + "' has detections but no ground truth; excluded");
      report.categories.push_back(std::move(cm));
      continue;
    }
    if (options.metrics.map) {
      cm.ap = average_precision(flags, cm.num_gt);
      aps.push_back(*cm.ap);
    }
    if (options.metrics.mue) {
      if (tp_g.empty() || fp_g.empty()) {
        report.notices.push_back("category '" + cm.name +
                                 "' lacks true or false positives; uncertainty error undefined, excluded");
      } else {
        cm.gmue = minimum_uncertainty_error(tp_g, fp_g);
        cm.cmue = minimum_uncertainty_error(tp_c, fp_c);
        gmues.push_back(cm.gmue->mue);
        cmues.push_back(cm.cmue->mue);
      }
    }
    report.categories.push_back(std::move(cm));
  }

  if (options.metrics.map && !aps.empty()) report.map = mean_of(aps);
  if (options.metrics.mue && !gmues.empty()) {
    report.mgmue = mean_of(gmues);
    report.mcmue = mean_of(cmues);
  }
  if (options.metrics.pdq)
    report.pdq = pdq_score(dets, gts, options.image_sizes, options.default_image_size, options.threads);
  return report;
}

}  // namespace bayesod
