#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "birdnest/cli.hpp"
#include "birdnest/io.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace birdnest;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "birdnest");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::parse_and_run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Scratch directory shared by the cases below, with one simulated dataset.
struct Workspace {
  fs::path dir;
  fs::path spec;
  fs::path events;

  Workspace() {
    dir = fs::temp_directory_path() / ("birdnest_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    spec = dir / "spec.json";
    events = dir / "events.csv";
    const Json doc = {{"m", 300},
                      {"pi", {0.6, 0.4}},
                      {"alpha", {{1.5, 1.2, 2, 4, 8}, {3, 2, 2, 2, 3}}},
                      {"beta", {{1, 1, 2, 3, 4, 4, 3, 2, 1, 1, 1}, {1, 1, 1, 1, 2, 3, 4, 4, 3, 2, 1}}},
                      {"ratings_per_user", {{"min", 2}, {"max", 20}}},
                      {"fraud",
                       {{"count", 15},
                        {"alpha", {0.5, 0.5, 0.5, 0.5, 30}},
                        {"beta", {20, 20, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}},
                        {"ratings_per_user", {{"min", 15}, {"max", 30}}}}},
                      {"seed", 1},
                      {"bucketing", {{"base", 4.0}, {"num_buckets", 11}, {"min_gap", 1}}}};
    std::ofstream(spec) << doc.dump(2);
    const auto r = run_cli({"simulate", "--input", spec.string(), "--output", events.string(), "--seed", "5"});
    if (r.code != 0) throw std::runtime_error("simulate failed: " + r.err);
  }
  ~Workspace() { fs::remove_all(dir); }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("simulate writes events, labels and a config echo") {
  auto& ws = workspace();
  const auto ev = lines(slurp(ws.events));
  REQUIRE(ev.size() > 300);
  CHECK(ev[0] == "user_id,product_id,stars,unix_timestamp_seconds");
  const auto labels = lines(slurp(ws.events.string() + ".labels.csv"));
  CHECK(labels.size() == 316);
  CHECK(labels[0] == "user_id,cluster,is_fraud");
  CHECK(labels.back().ends_with(",0,1"));
  const auto echo = Json::parse(slurp(ws.events.string() + ".config.json"));
  CHECK(echo.at("seed") == 5);
  CHECK(echo.at("synth_spec").at("seed") == 5);
}

TEST_CASE("rank writes a ranked CSV with ranks 1..m") {
  auto& ws = workspace();
  const auto out = ws.dir / "rank.csv";
  const auto model = ws.dir / "rank_model.json";
  const auto r = run_cli({"rank", "--input", ws.events.string(), "--output", out.string(), "--model",
                          model.string(), "--seed", "9", "--k-max", "3", "--samples", "32"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = lines(slurp(out));
  REQUIRE(rows.size() == 316);
  CHECK(rows[0] == "rank,user_id,nest,s_x,s_delta,cluster,n_ratings");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].starts_with(std::to_string(i) + ","));
  CHECK(fs::exists(model));
  const auto echo = Json::parse(slurp(out.string() + ".config.json"));
  CHECK(echo.at("command") == "rank");
  CHECK(echo.at("seed") == 9);
  CHECK(echo.at("samples") == 32);
  CHECK(echo.contains("bucketing"));
  CHECK(echo.contains("fitted_k"));

  SUBCASE("same seed gives byte-identical output") {
    const auto again = ws.dir / "rank_again.csv";
    const auto r2 = run_cli({"rank", "--input", ws.events.string(), "--output", again.string(), "--seed", "9",
                             "--k-max", "3", "--samples", "32", "--threads", "2"});
    REQUIRE(r2.code == 0);
    CHECK(slurp(again) == slurp(out));
  }
  SUBCASE("score with the saved model reproduces rank") {
    const auto scored = ws.dir / "scored.csv";
    const auto r3 = run_cli({"score", "--input", ws.events.string(), "--model", model.string(), "--output",
                             scored.string(), "--seed", "9", "--samples", "32"});
    REQUIRE_MESSAGE(r3.code == 0, r3.err);
    CHECK(slurp(scored) == slurp(out));
  }
  SUBCASE("JSON output by extension") {
    const auto js = ws.dir / "scored.json";
    const auto r4 = run_cli({"score", "--input", ws.events.string(), "--model", model.string(), "--output",
                             js.string(), "--seed", "9", "--samples", "32"});
    REQUIRE(r4.code == 0);
    const auto doc = Json::parse(slurp(js));
    CHECK(doc.dump().find("sigma_x") != std::string::npos);
  }
}

TEST_CASE("fit writes a loadable model") {
  auto& ws = workspace();
  const auto out = ws.dir / "model.json";
  const auto r = run_cli({"fit", "--input", ws.events.string(), "--output", out.string(), "--k", "2", "--seed", "4"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto file = model_from_json(Json::parse(slurp(out)));
  CHECK(file.model.K == 2);
  CHECK(file.model.assignments.size() == 315);
  CHECK(file.stars == 5);
  CHECK(fs::exists(out.string() + ".config.json"));
}

TEST_CASE("export-plots writes plot data") {
  auto& ws = workspace();
  const auto dir = ws.dir / "plots";
  const auto r = run_cli({"export-plots", "--input", ws.events.string(), "--output", dir.string(), "--k", "2",
                          "--seed", "3", "--samples", "16", "--top", "15"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto dist = lines(slurp(dir / "distributions.csv"));
  CHECK(dist[0] == "group,side,bucket,probability,users");
  CHECK(dist.size() == 1 + 2 * (5 + 21));  // bucketing re-derived from the data
  CHECK(dist[1].starts_with("top,rating,1,"));
  CHECK(dist[1].ends_with(",15"));
  const auto draws = lines(slurp(dir / "posterior_mean_rating.csv"));
  CHECK(draws.size() == 1 + 3 * 10'000);
  CHECK(fs::exists(dir / "scores.csv"));
  CHECK(fs::exists(dir / "config.json"));

  const auto r2 = run_cli({"export-plots", "--input", ws.events.string(), "--output", (ws.dir / "plots2").string(),
                           "--k", "2", "--seed", "3", "--samples", "16", "--users", "nobody"});
  CHECK(r2.code == cli::kData);
}

TEST_CASE("usage errors exit 1 with a one-line error") {
  auto& ws = workspace();
  auto r = run_cli({"rank", "--input", ws.events.string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.starts_with("error kind=usage message="));
  CHECK(lines(r.err).size() == 1);

  r = run_cli({"bogus"});
  CHECK(r.code == cli::kUsage);
  r = run_cli({"score", "--input", ws.events.string(), "--output", (ws.dir / "x.csv").string(), "--seed", "1"});
  CHECK(r.code == cli::kUsage);
  r = run_cli({"rank", "--input", ws.events.string(), "--output", (ws.dir / "x.csv").string(), "--k", "0"});
  CHECK(r.code == cli::kUsage);
  r = run_cli({"rank", "--input", ws.events.string(), "--output", (ws.dir / "x.csv").string(), "--stars", "x"});
  CHECK(r.code == cli::kUsage);
}

TEST_CASE("data errors exit 2") {
  auto& ws = workspace();
  auto r = run_cli({"rank", "--input", (ws.dir / "missing.csv").string(), "--output", (ws.dir / "x.csv").string(),
                    "--seed", "1"});
  CHECK(r.code == cli::kData);
  CHECK(r.err.starts_with("error kind=data message="));

  const auto bad = ws.dir / "bad.csv";
  std::ofstream(bad) << "u,p,3,1\nu,p,4,100\nu,p,9,200\nv,p,2,5\nv,p,2,9\n";
  r = run_cli({"rank", "--input", bad.string(), "--output", (ws.dir / "x.csv").string(), "--seed", "1"});
  CHECK(r.code == cli::kData);
  CHECK(slurp(bad.string() + ".errors.txt") == "line 3: stars out of range: u,p,9,200\n");

  const auto broken = ws.dir / "broken.json";
  std::ofstream(broken) << "{not json";
  r = run_cli({"score", "--input", ws.events.string(), "--model", broken.string(), "--output",
               (ws.dir / "x.csv").string(), "--seed", "1"});
  CHECK(r.code == cli::kData);
}

TEST_CASE("numeric errors exit 3") {
  auto& ws = workspace();
  const auto flat = ws.dir / "flat.csv";
  std::ofstream(flat) << "u,p,3,1\nu,p,4,2\nu,p,5,3\nv,p,2,5\nv,p,2,6\n";
  auto r = run_cli({"rank", "--input", flat.string(), "--output", (ws.dir / "x.csv").string(), "--seed", "1"});
  CHECK(r.code == cli::kNumeric);
  CHECK(r.err.starts_with("error kind=numeric message="));

  r = run_cli({"fit", "--input", ws.events.string(), "--output", (ws.dir / "x.json").string(), "--k", "1000",
               "--seed", "1"});
  CHECK(r.code == cli::kNumeric);
}

TEST_CASE("a missing seed is drawn and reported") {
  auto& ws = workspace();
  const auto out = ws.dir / "noseed.json";
  const auto r = run_cli({"fit", "--input", ws.events.string(), "--output", out.string(), "--k", "1"});
  REQUIRE(r.code == 0);
  REQUIRE(r.err.starts_with("seed="));
  const auto echo = Json::parse(slurp(out.string() + ".config.json"));
  CHECK(std::to_string(echo.at("seed").get<std::uint64_t>()) == r.err.substr(5, r.err.size() - 6));
}

TEST_CASE("the installed binary reports exit codes") {
  const char* tool = std::getenv("BIRDNEST_TOOL");
  if (!tool) {
    MESSAGE("BIRDNEST_TOOL not set; skipping");
    return;
  }
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(tool) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  auto& ws = workspace();
  CHECK(status("--help") == 0);
  CHECK(status("rank") == 1);
  CHECK(status("rank --input " + (ws.dir / "missing.csv").string() + " --output " + (ws.dir / "y.csv").string() +
               " --seed 1") == 2);
  CHECK(status("fit --input " + ws.events.string() + " --output " + (ws.dir / "y.json").string() +
               " --k 1 --seed 1") == 0);
}
