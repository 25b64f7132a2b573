#include "cli.hpp"
#include "curation.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using lineagetrack::testing::TempDir;
using nlohmann::json;
namespace cli = lineagetrack::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "lineagetrack");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// One synthetic dataset shared by the tests in this file.
class CliTest : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    const Outcome o = run({"synth", "--preset", "tiny2d", "--out", data().string()});
    ASSERT_EQ(o.code, 0) << o.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path data() { return dir_->path() / "tiny"; }
  static fs::path scratch(const std::string& name) { return dir_->path() / name; }

private:
  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

const std::string kPngSignature("\x89PNG\r\n\x1a\n", 8);

} // namespace

TEST_F(CliTest, VersionAndHelpExitZero) {
  EXPECT_EQ(run({"--version"}).code, cli::kExitOk);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  Outcome o = run({"frob"});
  EXPECT_EQ(o.code, cli::kExitUsage);
  EXPECT_NE(o.err.find("unknown mode 'frob'"), std::string::npos);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"link", "--data", data().string()}).code, cli::kExitUsage);
  EXPECT_EQ(run({"synth", "--preset", "nope", "--out", scratch("x").string()}).code, cli::kExitUsage);
  o = run({"link", "--data", data().string(), "--out", scratch("bad").string(), "--theta-link", "2"});
  EXPECT_EQ(o.code, cli::kExitUsage);
  EXPECT_EQ(o.err.rfind("error: code=config message=", 0), 0u) << o.err;
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
  const Outcome o = run({"link", "--data", scratch("does-not-exist").string(), "--out", scratch("r").string()});
  EXPECT_EQ(o.code, cli::kExitRuntime);
  EXPECT_EQ(o.err.rfind("error: code=io message=", 0), 0u) << o.err;
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);
}

TEST_F(CliTest, LinkThenEvalReachesHighAccuracy) {
  const fs::path res = scratch("link-res");
  Outcome o = run({"--workers", "2", "link", "--data", data().string(), "--out", res.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(res / "res_track.txt"));
  EXPECT_TRUE(fs::exists(res / "mask000.tif"));
  const json manifest = read_json(res / "manifest.json");
  EXPECT_EQ(manifest["mode"], "link");
  EXPECT_EQ(manifest["config"]["workers"], 2);

  o = run({"eval", "--ref", data().string(), "--res", res.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("TRA="), std::string::npos);
  const json m = read_json(res / "metrics.json");
  EXPECT_GE(m["TRA"].get<double>(), 0.99);
  EXPECT_TRUE(fs::exists(res / "metrics.txt"));
  EXPECT_TRUE(fs::exists(res / "eval_manifest.json"));
  EXPECT_EQ(read_json(res / "manifest.json")["mode"], "link");
}

TEST_F(CliTest, EvalOfReferenceAgainstItselfIsPerfect) {
  const fs::path out = scratch("self-eval");
  const Outcome o = run({"eval", "--ref", data().string(), "--res", (data() / "gt").string(), "--out", out.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const json m = read_json(out / "metrics.json");
  EXPECT_EQ(m["TRA"].get<double>(), 1.0);
  EXPECT_EQ(m["SEG"].get<double>(), 1.0);
  EXPECT_EQ(m["weights.fn"].get<double>(), 10.0);
}

TEST_F(CliTest, EvalWeightsAreConfigurable) {
  const fs::path out = scratch("weighted-eval");
  const Outcome o = run({"eval", "--ref", data().string(), "--res", (data() / "gt").string(), "--out", out.string(), "--w-fn",
                         "3"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(read_json(out / "metrics.json")["weights.fn"].get<double>(), 3.0);
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
  const fs::path cfg = scratch("opts.toml");
  std::ofstream(cfg) << "workers = 2\n[track3d]\ntau = 5\ns-link = 0.7\n";
  const fs::path res = scratch("track-res");
  const Outcome o =
      run({"--config", cfg.string(), "track3d", "--data", data().string(), "--out", res.string(), "--tau", "22"});
  ASSERT_EQ(o.code, 0) << o.err;
  const json c = read_json(res / "manifest.json")["config"];
  EXPECT_EQ(c["tracker"]["tau"].get<double>(), 22.0);
  EXPECT_EQ(c["tracker"]["s_link"].get<double>(), 0.7);
  EXPECT_EQ(c["workers"], 2);
  EXPECT_TRUE(fs::exists(res / "centers_used.txt"));
}

TEST_F(CliTest, OutputsIdenticalAcrossWorkerCounts) {
  auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::vector<std::string> tables;
  for (const char* w : {"1", "3"}) {
    const fs::path res = scratch(std::string("det-") + w);
    ASSERT_EQ(run({"--workers", w, "--seed", "5", "link", "--data", data().string(), "--out", res.string()}).code, 0);
    tables.push_back(read_file(res / "res_track.txt") + read_file(res / "mask004.tif"));
  }
  EXPECT_EQ(tables[0], tables[1]);
}

TEST_F(CliTest, CurationServiceRunsSelectedSeeds) {
  cli::CurationOptions opts;
  opts.data = data();
  opts.out = scratch("serve");
  cli::CurationService svc(opts);

  cli::HttpReply r = svc.handle("GET", "/api/seeds", "");
  ASSERT_EQ(r.status, 200);
  json seeds = json::parse(r.body);
  ASSERT_GE(seeds.size(), 2u);
  for (const json& s : seeds) EXPECT_EQ(s["t"], 7); // final frame for 2D linking

  seeds[0]["selected"] = false;
  r = svc.handle("PUT", "/api/seeds", seeds.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(json::parse(r.body), seeds);
  EXPECT_EQ(json::parse(svc.handle("GET", "/api/seeds", "").body), seeds);

  EXPECT_EQ(svc.handle("GET", "/api/frames/0/overlay", "").status, 404);

  r = svc.handle("POST", "/api/track/start", json{{"config", {{"theta_link", 0.5}}}}.dump());
  ASSERT_EQ(r.status, 202) << r.body;
  const json started = json::parse(r.body);
  EXPECT_EQ(started["mode"], "link");
  ASSERT_EQ(started["config"]["seeds"].size(), seeds.size() - 1);
  for (const json& s : started["config"]["seeds"]) EXPECT_NE(s["id"], seeds[0]["id"]);
  svc.wait();

  const json st = json::parse(svc.handle("GET", "/api/track/status", "").body);
  EXPECT_EQ(st["state"], "done") << st.dump();
  const json lin = json::parse(svc.handle("GET", "/api/lineage", "").body);
  EXPECT_FALSE(lin["tracklets"].empty());
  for (const json& t : lin["tracklets"]) EXPECT_LE(t["t_start"].get<int>(), t["t_end"].get<int>());

  r = svc.handle("GET", "/api/frames/3/overlay", "");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  EXPECT_EQ(r.body.substr(0, 8), kPngSignature);
  r = svc.handle("GET", "/api/frames/0/projection", "");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body.substr(0, 8), kPngSignature);
  EXPECT_TRUE(fs::exists(scratch("serve") / "run-1" / "res_track.txt"));
}

TEST_F(CliTest, CurationServiceRejectsBadRequests) {
  cli::CurationOptions opts;
  opts.data = data();
  opts.out = scratch("serve-bad");
  cli::CurationService svc(opts);
  auto code = [](const cli::HttpReply& r) { return json::parse(r.body)["error"]["code"].get<std::string>(); };

  EXPECT_EQ(svc.handle("GET", "/api/nothing", "").status, 404);
  EXPECT_EQ(svc.handle("DELETE", "/api/seeds", "").status, 405);
  EXPECT_EQ(svc.handle("GET", "/api/frames/99/projection", "").status, 404);
  cli::HttpReply r = svc.handle("PUT", "/api/seeds", "{\"not\": \"a list\"}");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(code(r), "bad_request");
  EXPECT_EQ(svc.handle("PUT", "/api/seeds", R"([{"id": 1, "t": 7, "y": 3, "x": 4}, {"id": 1, "t": 7, "y": 5, "x": 6}])").status, 400);
  EXPECT_EQ(svc.handle("PUT", "/api/seeds", R"([{"id": 1, "t": 70, "y": 3, "x": 4}])").status, 400);
  EXPECT_EQ(svc.handle("POST", "/api/track/start", json{{"config", {{"bogus", 1}}}}.dump()).status, 400);

  ASSERT_EQ(svc.handle("PUT", "/api/seeds", R"([{"id": 1, "t": 7, "y": 3, "x": 4, "selected": false}])").status, 200);
  r = svc.handle("POST", "/api/track/start", "{}");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(json::parse(svc.handle("GET", "/api/track/status", "").body)["state"], "idle");
}
