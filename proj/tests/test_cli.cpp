#include <filesystem>
#include <fstream>
#include <sstream>

#include "bayesod/cli.hpp"
#include "bayesod/io.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bayesod;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string slurp(const std::string& p) { return read_text_file(p); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("simulate, fuse and eval chain") {
    TempDir d("bayesod_cli_chain");
    auto r = run({"simulate", "--out", d / "p.jsonl", "--gt", d / "g.jsonl", "--seed", "5", "--num-images", "8"});
    REQUIRE(r.code == 0);
    r = run({"fuse", "--preds", d / "p.jsonl", "--out", d / "d.jsonl"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(d / "d.jsonl.warnings.jsonl"));
    r = run({"eval", "--dets", d / "d.jsonl", "--gt", d / "g.jsonl", "--out", d / "r.json"});
    REQUIRE(r.code == 0);
    const auto report = nlohmann::json::parse(slurp(d / "r.json"));
    CHECK(report["pdq_definition"] == "PDQ (per cited definition)");
    CHECK(report["mAP"].get<double>() > 50.0);
    CHECK(report["categories"].size() == 3);

    r = run({"eval", "--dets", d / "d.jsonl", "--gt", d / "g.jsonl", "--metrics", "map"});
    REQUIRE(r.code == 0);
    const auto only_map = nlohmann::json::parse(r.out);
    CHECK(only_map["mAP"].is_number());
    CHECK(only_map["PDQ"].is_null());

    r = run({"render", "--dets", d / "d.jsonl", "--image-size", "640x480", "--out", d / "svg",
             "--entropy-thresholds", "8,10"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(d / "svg/image_0.svg"));
  }

  TEST_CASE("nms equals bayesod when no anchors overlap") {
    TempDir d("bayesod_cli_singleton");
    REQUIRE(run({"simulate", "--out", d / "p.jsonl", "--gt", d / "g.jsonl", "--num-images", "5", "--set",
                 "anchors_per_object=1", "--set", "objects_per_image=1", "--set", "false_anchor_rate=0"})
                .code == 0);
    REQUIRE(run({"fuse", "--preds", d / "p.jsonl", "--out", d / "a.jsonl", "--mode", "bayesod"}).code == 0);
    REQUIRE(run({"fuse", "--preds", d / "p.jsonl", "--out", d / "b.jsonl", "--mode", "nms"}).code == 0);
    CHECK(slurp(d / "a.jsonl") == slurp(d / "b.jsonl"));
  }

  TEST_CASE("exit codes") {
    TempDir d("bayesod_cli_codes");
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"fuse", "--preds", "x"}).code == 1);
    CHECK(run({"fuse", "--preds", d / "missing.jsonl", "--out", d / "o.jsonl"}).code == 2);
    REQUIRE(run({"simulate", "--out", d / "p.jsonl", "--gt", d / "g.jsonl", "--num-images", "2"}).code == 0);
    const auto both_off = run({"fuse", "--preds", d / "p.jsonl", "--out", d / "o.jsonl", "--epistemic", "off",
                               "--aleatoric", "off"});
    CHECK(both_off.code == 1);
    CHECK(both_off.err.find("uncertainty") != std::string::npos);
    CHECK(run({"simulate", "--out", d / "p.jsonl", "--gt", d / "g.jsonl", "--set", "box_size=40,900"}).code == 2);
    {
      std::ofstream bad(d / "bad.jsonl");
      bad << "{\"type\":\"header\",\"schema\":\"bayesod.predictions\",\"version\":1,\"K\":2,\"T\":1,"
             "\"categories\":[\"a\",\"b\"]}\n{oops\n";
    }
    const auto parse = run({"fuse", "--preds", d / "bad.jsonl", "--out", d / "o.jsonl"});
    CHECK(parse.code == 2);
    CHECK(parse.err.find("line 2") != std::string::npos);
    {
      std::ofstream np(d / "np.jsonl");
      np << "{\"type\":\"header\",\"schema\":\"bayesod.predictions\",\"version\":1,\"K\":2,\"T\":1,"
            "\"categories\":[\"a\",\"b\"],\"cov_packing\":\"diagonal\"}\n"
            "{\"image_id\":0,\"anchor_id\":0,\"box_samples\":[[0,0,10,10]],\"aleatoric_covs\":[[1,1,-1,1]],"
            "\"logits\":[[1,0]]}\n";
    }
    CHECK(run({"fuse", "--preds", d / "np.jsonl", "--out", d / "o.jsonl"}).code == 3);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("loss-check reports gradient agreement") {
    TempDir d("bayesod_cli_loss");
    {
      std::ofstream s(d / "s.jsonl");
      s << "{\"prediction\":[1,2,3,4],\"target\":[0,2,5,4],\"variance\":[1,2,3,4],"
           "\"l_strict\":[0.1,-0.2,0.3,0.05,0.0,-0.4],\"log_d\":[0.1,0.2,-0.3,0.4]}\n";
    }
    for (const std::string loss : {"diag", "mv", "surrogate"}) {
      const auto r = run({"loss-check", "--samples", d / "s.jsonl", "--loss", loss, "--grad-check"});
      REQUIRE(r.code == 0);
      std::stringstream lines(r.out);
      std::string first, last;
      std::getline(lines, first);
      std::getline(lines, last);
      const auto summary = nlohmann::json::parse(last);
      CHECK(summary["max_rel_err"].get<double>() < 1e-4);
    }
  }
}
