#include <random>

#include "bayesod/inference.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bayesod;

namespace {

AnchorPredictiond constant_anchor(std::int64_t id, const Vector4d& box, const Matrix4d& cov, const VectorXd& logits,
                                  int runs = 4) {
  AnchorPredictiond p;
  p.anchor_id = id;
  p.box_samples.resize(runs, 4);
  p.logit_samples.resize(runs, logits.size());
  for (int t = 0; t < runs; ++t) {
    p.box_samples.row(t) = box.transpose();
    p.logit_samples.row(t) = logits.transpose();
    p.aleatoric_covs.push_back(cov);
  }
  return p;
}

// Three objects with anchors jittered around each, plus scattered clutter.
std::vector<AnchorPredictiond> seeded_scene(std::uint64_t seed, int anchors) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::vector<Vector4d> objects{Vector4d(20, 20, 90, 110), Vector4d(200, 50, 260, 180),
                                      Vector4d(400, 300, 520, 380)};
  std::vector<AnchorPredictiond> out;
  for (int a = 0; a < anchors; ++a) {
    const bool clutter = a % 8 == 7;
    const Vector4d base = clutter ? Vector4d(600 - a, 10 + 10 * a, 630 - a, 40 + 10 * a)
                                  : objects[static_cast<std::size_t>(a % 3)];
    const int runs = 6;
    AnchorPredictiond p;
    p.anchor_id = 1000 - a;
    p.box_samples.resize(runs, 4);
    p.logit_samples.resize(runs, 4);
    for (int t = 0; t < runs; ++t) {
      for (int i = 0; i < 4; ++i) p.box_samples(t, i) = base(i) + 3.0 * n(rng);
      for (int c = 0; c < 4; ++c) p.logit_samples(t, c) = (c == a % 3 && !clutter ? 3.0 : 0.0) + 0.7 * n(rng);
      p.aleatoric_covs.push_back(oracle::random_spd(rng, 2.0));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("single anchor passes through") {
    const Matrix4d cov = Matrix4d::Identity() * 4.0;
    const std::vector<AnchorPredictiond> preds{constant_anchor(7, Vector4d(0, 0, 10, 10), cov, Eigen::Vector3d(2, 0, 0))};
    FusionConfig cfg;
    const auto r = bayesod_inference(preds, cfg, 3);
    REQUIRE(r.detections.size() == 1);
    const auto& d = r.detections[0];
    CHECK(d.image_id == 3);
    CHECK(d.member_anchor_ids == std::vector<std::int64_t>{7});
    CHECK((d.box.cov - cov).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((d.box.mean - Vector4d(0, 0, 10, 10)).cwiseAbs().maxCoeff() < 1e-12);
    const VectorXd p = softmax<double>(Eigen::Vector3d(2, 0, 0));
    const VectorXd expected = (VectorXd::Ones(3) + 30.0 * p) / 33.0;
    CHECK((d.category.probs - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(d.score == doctest::Approx(expected(0)));
    CHECK(d.gaussian_entropy == doctest::Approx(gaussian_entropy(d.box)));
    CHECK(d.categorical_entropy == doctest::Approx(categorical_entropy(d.category)));
  }

  TEST_CASE("coincident anchors halve the covariance; nms does not") {
    const Matrix4d cov = Matrix4d::Identity() * 4.0;
    const std::vector<AnchorPredictiond> preds{
        constant_anchor(1, Vector4d(0, 0, 10, 10), cov, Eigen::Vector2d(2, 0)),
        constant_anchor(2, Vector4d(0, 0, 10, 10), cov, Eigen::Vector2d(2, 0))};
    FusionConfig cfg;
    auto r = bayesod_inference(preds, cfg);
    REQUIRE(r.detections.size() == 1);
    CHECK((r.detections[0].box.cov - cov / 2.0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.detections[0].member_anchor_ids == std::vector<std::int64_t>{1, 2});
    CHECK(r.detections[0].dirichlet.total() == doctest::Approx(2 + 60));
    cfg.mode = FusionMode::nms;
    r = bayesod_inference(preds, cfg);
    REQUIRE(r.detections.size() == 1);
    CHECK((r.detections[0].box.cov - cov).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.detections[0].dirichlet.total() == doctest::Approx(2 + 30));
  }

  TEST_CASE("end to end chain matches the straight-line replay") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto preds = seeded_scene(seed, 40);
      FusionConfig cfg;
      cfg.score_threshold = 0.2;
      const auto r = bayesod_inference(preds, cfg);
      const auto expected = oracle::replay_inference(preds, 0.5, 30, 0.2);
      REQUIRE(r.detections.size() == expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& d = r.detections[i];
        REQUIRE(d.member_anchor_ids == expected[i].members);
        REQUIRE(oracle::max_rel(d.box.mean, expected[i].mean) < 1e-6);
        REQUIRE(oracle::max_rel(d.box.cov, expected[i].cov) < 1e-6);
        REQUIRE(oracle::max_rel(d.category.probs, expected[i].probs) < 1e-6);
      }
    }
  }

  TEST_CASE("nms and bayesod agree on singleton clusters") {
    std::vector<AnchorPredictiond> preds;
    for (int i = 0; i < 5; ++i) {
      const double x = 100.0 * i;
      preds.push_back(constant_anchor(i, Vector4d(x, 0, x + 50, 50), Matrix4d::Identity() * (1 + i),
                                      Eigen::Vector3d(1.0 + i, 0.5, 0)));
    }
    FusionConfig cfg;
    const auto a = bayesod_inference(preds, cfg);
    cfg.mode = FusionMode::nms;
    const auto b = bayesod_inference(preds, cfg);
    REQUIRE(a.detections.size() == b.detections.size());
    for (std::size_t i = 0; i < a.detections.size(); ++i) {
      CHECK(a.detections[i].box.mean == b.detections[i].box.mean);
      CHECK(a.detections[i].box.cov == b.detections[i].box.cov);
      CHECK(a.detections[i].dirichlet.alpha == b.detections[i].dirichlet.alpha);
    }
  }

  TEST_CASE("degenerate anchors are dropped with a warning") {
    const std::vector<AnchorPredictiond> preds{
        constant_anchor(1, Vector4d(10, 10, 10, 20), Matrix4d::Identity(), Eigen::Vector2d(2, 0)),
        constant_anchor(2, Vector4d(0, 0, 10, 10), Matrix4d::Identity(), Eigen::Vector2d(2, 0))};
    const auto r = bayesod_inference(preds, FusionConfig{});
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].anchor_id == 1);
    CHECK(r.detections.size() == 1);
  }

  TEST_CASE("score threshold and background filtering") {
    const std::vector<AnchorPredictiond> preds{
        constant_anchor(1, Vector4d(0, 0, 10, 10), Matrix4d::Identity(), Eigen::Vector3d(0, 0, 5)),
        constant_anchor(2, Vector4d(50, 50, 60, 60), Matrix4d::Identity(), Eigen::Vector3d(5, 0, 0))};
    FusionConfig cfg;
    cfg.background_index = 2;
    auto r = bayesod_inference(preds, cfg);
    REQUIRE(r.detections.size() == 1);
    CHECK(r.detections[0].member_anchor_ids == std::vector<std::int64_t>{2});
    cfg.background_index.reset();
    cfg.score_threshold = 0.99;
    r = bayesod_inference(preds, cfg);
    CHECK(r.detections.empty());
  }

  TEST_CASE("ablation switches") {
    AnchorPredictiond p;
    p.anchor_id = 0;
    p.box_samples.resize(2, 4);
    p.box_samples << 0, 0, 10, 10, 2, 2, 12, 12;
    p.logit_samples = Eigen::MatrixXd::Zero(2, 2);
    Matrix4d ale = Matrix4d::Identity() * 3.0;
    ale(0, 2) = ale(2, 0) = 1.0;
    p.aleatoric_covs = {ale, ale};
    FusionConfig cfg;
    CHECK(oracle::max_rel(anchor_posterior(p, cfg).likelihood.cov, Matrix4d::Ones() + ale) < 1e-12);
    cfg.epistemic = false;
    CHECK(oracle::max_rel(anchor_posterior(p, cfg).likelihood.cov, ale) < 1e-12);
    cfg.epistemic = true;
    cfg.aleatoric = false;
    // Rank-one epistemic term gets the trace-scaled jitter.
    const Matrix4d epi_only = anchor_posterior(p, cfg).likelihood.cov;
    CHECK(oracle::max_rel(epi_only, Matrix4d::Ones() + 1e-6 * Matrix4d::Identity()) < 1e-12);
    cfg.aleatoric = true;
    cfg.covariance = CovarianceMode::diagonal;
    CHECK(oracle::max_rel(anchor_posterior(p, cfg).likelihood.cov, Matrix4d::Ones() + Matrix4d::Identity() * 3.0) <
          1e-12);
    cfg.epistemic = false;
    cfg.aleatoric = false;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }

  TEST_CASE("run count mismatch is rejected") {
    const std::vector<AnchorPredictiond> preds{
        constant_anchor(1, Vector4d(0, 0, 10, 10), Matrix4d::Identity(), Eigen::Vector2d(2, 0), 3)};
    FusionConfig cfg;
    cfg.expected_runs = 4;
    CHECK_THROWS_AS(bayesod_inference(preds, cfg), ValidationError);
  }

  TEST_CASE("sampled counts are reproducible and keyed per image") {
    const auto preds = seeded_scene(3, 24);
    FusionConfig cfg;
    cfg.counts = {30, CountMode::sampled, 5};
    const auto a = bayesod_inference(preds, cfg, 1);
    const auto b = bayesod_inference(preds, cfg, 1);
    const auto c = bayesod_inference(preds, cfg, 2);
    REQUIRE(a.detections.size() == b.detections.size());
    bool any_differ = false;
    for (std::size_t i = 0; i < a.detections.size(); ++i) {
      CHECK(a.detections[i].dirichlet.alpha == b.detections[i].dirichlet.alpha);
      if (i < c.detections.size() && a.detections[i].dirichlet.alpha != c.detections[i].dirichlet.alpha)
        any_differ = true;
      CHECK(a.detections[i].dirichlet.alpha.sum() ==
            doctest::Approx(4 + 30.0 * static_cast<double>(a.detections[i].member_anchor_ids.size())));
    }
    CHECK(any_differ);
  }
}
