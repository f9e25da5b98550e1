#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "scenarios.hpp"
#include "sta4clc/csv.hpp"
#include "sta4clc/graph.hpp"

using namespace sta4clc;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const std::string& args) {
  static fixtures::TempDir logs;
  static int n = 0;
  const auto out = logs / ("out" + std::to_string(n));
  const auto err = logs / ("err" + std::to_string(n++));
  const std::string cmd = std::string(STA4CLC_TOOL) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = fixtures::slurp(out);
  r.err = fixtures::slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const char* kPeriodFlags = " --weeks 40 --stride 20 --min-sector-blocks 4 --k 6";

// One small scenario and one trained run shared by the cases below.
struct Workspace {
  fixtures::TempDir dir;
  fs::path data = dir / "data";
  fs::path run_dir = dir / "run";
  fs::path graph = dir / "graph.json";

  Workspace() {
    dir.write("scenario.json", nlohmann::json(scenarios::small(11)).dump());
    dir.write("model.json", R"({"epochs": 30, "hidden_dim": 16, "attention_heads": 2})");
    auto r = run("synth --config " + q(dir / "scenario.json") + " --out " + q(data));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = run("graph --data " + q(data) + " --out " + q(graph) + kPeriodFlags);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = run("train --data " + q(data) + " --graph " + q(graph) + " --config " + q(dir / "model.json") +
            " --folds 3 --seed 42 --out " + q(run_dir) + kPeriodFlags);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

std::map<std::pair<std::string, std::string>, double> delta_by_node(const fs::path& predictions) {
  const auto t = csv::Table::read(predictions);
  std::map<std::pair<std::string, std::string>, double> m;
  for (std::size_t r = 0; r < t.rows(); ++r)
    m[{t.cell(r, t.column("block_id")), t.cell(r, t.column("period_id"))}] = t.number(r, t.column("delta_y_hat"));
  return m;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = fixtures::slurp(e.path());
  return files;
}

}  // namespace

TEST_CASE("synth writes the four tables and the truth file") {
  auto& w = workspace();
  for (const char* f : {"blocks.csv", "pois.csv", "weather.csv", "disasters.csv", "truth.json", "manifest.json"})
    CHECK(fs::exists(w.data / f));
  fixtures::TempDir again;
  const auto r = run("synth --config " + q(w.dir / "scenario.json") + " --out " + q(again.path()));
  REQUIRE(r.code == 0);
  for (const char* f : {"blocks.csv", "pois.csv", "weather.csv", "disasters.csv", "truth.json"})
    CHECK(fixtures::slurp(w.data / f) == fixtures::slurp(again / f));
}

TEST_CASE("usage errors exit 1 and print usage on stderr") {
  auto r = run("train --out /tmp/never");
  CHECK(r.code == 1);
  CHECK(r.err.find("--data") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);

  r = run("train --data " + q(workspace().data) + " --out /tmp/never --no-such-flag");
  CHECK(r.code == 1);
  CHECK(r.err.find("no-such-flag") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);

  r = run("");
  CHECK(r.code == 1);
  r = run("frobnicate");
  CHECK(r.code == 1);
  CHECK(!fs::exists("/tmp/never"));
}

TEST_CASE("malformed data exits 2, a diverging fit exits 3") {
  auto& w = workspace();
  fixtures::TempDir broken;
  for (const char* f : {"pois.csv", "weather.csv", "disasters.csv"}) fs::copy_file(w.data / f, broken / f);
  std::string blocks = fixtures::slurp(w.data / "blocks.csv");
  blocks.replace(blocks.find("y_start"), 7, "y_begin");
  broken.write("blocks.csv", blocks);
  auto r = run("train --data " + q(broken.path()) + " --out " + q(broken / "run") + kPeriodFlags);
  CHECK(r.code == 2);
  CHECK(r.err.find("y_start") != std::string::npos);

  fixtures::TempDir tmp;
  tmp.write("model.json", R"({"epochs": 3, "hidden_dim": 8, "lr": 1e300})");
  r = run("train --data " + q(w.data) + " --config " + q(tmp / "model.json") + " --folds 2 --out " + q(tmp / "run") +
          kPeriodFlags);
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);

  tmp.write("typo.json", R"({"epoch": 3})");
  r = run("train --data " + q(w.data) + " --config " + q(tmp / "typo.json") + " --out " + q(tmp / "run2") +
          kPeriodFlags);
  CHECK(r.code == 2);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("train populates the run directory") {
  auto& w = workspace();
  for (const char* f : {"config.json", "params.bin", "model.json", "history.csv", "metrics.json", "predictions.csv",
                        "graph.json", "manifest.json"})
    CHECK(fs::exists(w.run_dir / f));
  const auto manifest = nlohmann::json::parse(fixtures::slurp(w.run_dir / "manifest.json"));
  CHECK(manifest["subcommand"] == "train");
  CHECK(manifest["seed"] == 42);
  CHECK(manifest["inputs"].contains("data/blocks.csv"));
  CHECK(manifest["inputs"]["data/blocks.csv"]["sha256"].get<std::string>().size() == 64);
  CHECK(manifest["config"]["model"]["epochs"] == 30);
  CHECK(manifest.contains("wall_time_s"));
  CHECK(manifest.contains("tool_version"));

  const auto history = csv::Table::read(w.run_dir / "history.csv");
  CHECK(history.rows() == 3 * 31);
  const auto predictions = csv::Table::read(w.run_dir / "predictions.csv");
  CHECK(predictions.rows() == 80);
  CHECK(graph::read_graph_json(w.run_dir / "graph.json").n_nodes == 40);
}

TEST_CASE("train is reproducible byte for byte") {
  auto& w = workspace();
  fixtures::TempDir again;
  const auto r = run("train --data " + q(w.data) + " --graph " + q(w.graph) + " --config " + q(w.dir / "model.json") +
                     " --folds 3 --seed 42 --out " + q(again.path()) + kPeriodFlags);
  REQUIRE(r.code == 0);
  for (const char* f : {"params.bin", "metrics.json", "history.csv", "predictions.csv", "model.json", "config.json"})
    CHECK_MESSAGE(fixtures::slurp(w.run_dir / f) == fixtures::slurp(again / f), f);
}

TEST_CASE("graph and resilience outputs") {
  auto& w = workspace();
  const auto g = graph::read_graph_json(w.graph);
  CHECK(g.n_nodes == 40);
  CHECK(g.relations.front().name == "adjacency");

  fixtures::TempDir tmp;
  const auto r = run("resilience --data " + q(w.data) + " --window 10 --bins 6 --weeks 40 --stride 20 --out " +
                     q(tmp / "res.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto t = csv::Table::read(tmp / "res.csv");
  CHECK(t.header() == std::vector<std::string>{"block_id", "period_id", "week", "r_value"});
  CHECK(t.rows() == 40 * 2 * 40);
  std::size_t defined = 0;
  for (std::size_t i = 0; i < t.rows(); ++i)
    if (!t.cell(i, 3).empty()) ++defined;
  CHECK(defined > 0);
  CHECK(t.cell(0, 2) == "0");
  CHECK(fs::exists(tmp / "res.manifest.json"));

  CHECK(run("resilience --data " + q(w.data) + " --window 7 --out " + q(tmp / "bad.csv")).code == 1);
}

TEST_CASE("evaluate reproduces the out-of-fold predictions") {
  auto& w = workspace();
  fixtures::TempDir tmp;
  const auto r = run("evaluate --model " + q(w.run_dir) + " --data " + q(w.data) + " --out " + q(tmp.path()));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fixtures::slurp(tmp / "predictions.csv") == fixtures::slurp(w.run_dir / "predictions.csv"));
  const auto trained = nlohmann::json::parse(fixtures::slurp(w.run_dir / "metrics.json"));
  const auto scored = nlohmann::json::parse(fixtures::slurp(tmp / "metrics.json"));
  REQUIRE(scored["folds"].size() == 3);
  for (std::size_t f = 0; f < 3; ++f)
    CHECK(scored["folds"][f]["validation"]["macro_f1"] == trained["folds"][f]["validation"]["macro_f1"]);
}

TEST_CASE("predict with no overrides matches training and leaves the run untouched") {
  auto& w = workspace();
  const auto before = snapshot(w.run_dir);
  fixtures::TempDir tmp;
  tmp.write("none.csv", "kind,block_id,field,value\n");
  const auto r = run("predict --model " + q(w.run_dir) + " --data " + q(w.data) + " --overrides " +
                     q(tmp / "none.csv") + " --out " + q(tmp / "p"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fixtures::slurp(tmp / "p" / "predictions.csv") == fixtures::slurp(w.run_dir / "predictions.csv"));
  CHECK(snapshot(w.run_dir) == before);

  CHECK(run("predict --model " + q(w.run_dir) + " --data " + q(w.data) + " --out " + q(w.run_dir)).code == 1);
  CHECK(snapshot(w.run_dir) == before);
}

TEST_CASE("a severe added disaster lowers predicted change in its footprint") {
  auto& w = workspace();
  const auto blocks = csv::Table::read(w.data / "blocks.csv");
  const std::size_t c_id = blocks.column("block_id"), c_x = blocks.column("cx"), c_y = blocks.column("cy");
  const double x0 = blocks.number(0, c_x), y0 = blocks.number(0, c_y);
  std::set<std::string> footprint;
  for (std::size_t r = 0; r < blocks.rows(); ++r)
    if (std::hypot(blocks.number(r, c_x) - x0, blocks.number(r, c_y) - y0) < 900.0)
      footprint.insert(blocks.cell(r, c_id));
  REQUIRE(footprint.size() >= 3);

  fixtures::TempDir tmp;
  std::ostringstream rows;
  rows << "kind,block_id,field,value\n";
  for (const auto& b : footprint) rows << "disaster," << b << ",30,4.0\n";
  tmp.write("storm.csv", rows.str());
  tmp.write("none.csv", "kind,block_id,field,value\n");
  const auto before = snapshot(w.run_dir);
  auto r = run("predict --model " + q(w.run_dir) + " --data " + q(w.data) + " --overrides " + q(tmp / "none.csv") +
               " --out " + q(tmp / "base"));
  REQUIRE(r.code == 0);
  r = run("predict --model " + q(w.run_dir) + " --data " + q(w.data) + " --overrides " + q(tmp / "storm.csv") +
          " --out " + q(tmp / "storm"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto base = delta_by_node(tmp / "base" / "predictions.csv");
  const auto storm = delta_by_node(tmp / "storm" / "predictions.csv");
  bool lowered = false;
  for (const auto& [node, d] : storm)
    if (footprint.count(node.first) && d < base.at(node)) lowered = true;
  CHECK(lowered);
  CHECK(snapshot(w.run_dir) == before);
}

TEST_CASE("override validation names the offending field") {
  auto& w = workspace();
  fixtures::TempDir tmp;
  const auto first_block = csv::Table::read(w.data / "blocks.csv").cell(0, 0);
  auto predict = [&](const std::string& body) {
    tmp.write("o.csv", body);
    return run("predict --model " + q(w.run_dir) + " --data " + q(w.data) + " --overrides " + q(tmp / "o.csv") +
               " --out " + q(tmp / "p"));
  };
  auto r = predict("kind,block_id,field,value\nattribute," + first_block + ",z_O,0.5\n");
  CHECK(r.code == 2);
  CHECK(r.err.find("'z_O'") != std::string::npos);
  r = predict("kind,block_id,field,value\nattribute,NOPE,z_0,0.5\n");
  CHECK(r.code == 2);
  CHECK(r.err.find("'NOPE'") != std::string::npos);
  r = predict("kind,block_id,field,value\ndisaster," + first_block + ",999,1.0\n");
  CHECK(r.code == 2);
  r = predict("kind,block_id,field,value\nattribute," + first_block + ",z_0,2.5\n");
  CHECK(r.code == 0);
}

TEST_CASE("ablate writes the variant table") {
  auto& w = workspace();
  fixtures::TempDir tmp;
  tmp.write("model.json", R"({"epochs": 5, "hidden_dim": 8, "attention_heads": 2})");
  const auto r = run("ablate --data " + q(w.data) + " --graph " + q(w.graph) + " --config " + q(tmp / "model.json") +
                     " --folds 2 --variants M1,M4 --out " + q(tmp.path()) + kPeriodFlags);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto t = csv::Table::read(tmp / "ablation.csv");
  REQUIRE(t.rows() == 2);
  CHECK(t.cell(0, 0) == "M1");
  CHECK(t.cell(1, 0) == "M4");
  CHECK(run("ablate --data " + q(w.data) + " --variants M9 --out " + q(tmp / "x") + kPeriodFlags).code == 1);
}
