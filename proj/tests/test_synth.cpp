#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "scenarios.hpp"
#include "sta4clc/data.hpp"
#include "sta4clc/error.hpp"
#include "sta4clc/synth.hpp"

using namespace sta4clc;
using data::ChangeClass;

namespace {

std::string slurp_all(const fixtures::TempDir& dir) {
  std::string all;
  for (const char* f : {"blocks.csv", "pois.csv", "weather.csv", "disasters.csv", "truth.json"})
    all += fixtures::slurp(dir / f);
  return all;
}

}  // namespace

TEST_CASE("same seed gives byte-identical files, another seed differs") {
  fixtures::TempDir a, b, c;
  synth::write_scenario(synth::generate(scenarios::small(3)), a.path());
  synth::write_scenario(synth::generate(scenarios::small(3)), b.path());
  synth::write_scenario(synth::generate(scenarios::small(4)), c.path());
  CHECK(slurp_all(a) == slurp_all(b));
  CHECK(slurp_all(a) != slurp_all(c));
}

TEST_CASE("written scenario loads back and labels match the intended classes") {
  const auto cfg = scenarios::small();
  const auto sc = synth::generate(cfg);
  fixtures::TempDir dir;
  synth::write_scenario(sc, dir.path());
  data::DatasetOptions opts;
  opts.weeks_per_period = cfg.weeks_per_period;
  opts.period_stride_weeks = cfg.period_stride_weeks;
  const auto ds = data::load_dataset(data::DatasetPaths::in_directory(dir.path()), opts);
  CHECK(ds.n_blocks() == cfg.n_blocks);
  CHECK(ds.records.size() == cfg.n_blocks * cfg.n_periods);
  CHECK(ds.total_weeks == cfg.total_weeks());
  REQUIRE(sc.truth.nodes.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const auto& t = sc.truth.nodes[i];
    CHECK(r.block_id == t.block_id);
    CHECK(r.period_id == t.period_id);
    CHECK(data::derive_label(r.y_start, r.y_end, ds.label_config) == t.intended);
  }
}

TEST_CASE("class proportions are met within three points") {
  const auto cfg = synth::ScenarioConfig::reference();
  const auto sc = synth::generate(cfg);
  std::array<double, 3> counts{};
  for (const auto& n : sc.truth.nodes) counts[static_cast<int>(n.intended)] += 1.0;
  for (int c = 0; c < 3; ++c)
    CHECK(std::abs(counts[c] / static_cast<double>(sc.truth.nodes.size()) - cfg.class_proportions[c]) <= 0.03);
}

TEST_CASE("no disasters and no noise means no change anywhere") {
  auto cfg = scenarios::small();
  cfg.disasters.clear();
  cfg.label_noise = 0.0;
  const auto sc = synth::generate(cfg);
  for (const auto& r : sc.dataset.records) CHECK(data::derive_label(r.y_start, r.y_end, {}) == ChangeClass::NoChange);
  CHECK(sc.dataset.disasters.empty());
}

TEST_CASE("blocks outside every footprint carry zero impact") {
  const auto cfg = synth::ScenarioConfig::reference();
  const auto sc = synth::generate(cfg);
  const auto& ds = sc.dataset;
  for (std::size_t i = 0; i < sc.truth.nodes.size(); ++i) {
    const auto& node = sc.truth.nodes[i];
    bool inside = false;
    for (const auto& d : cfg.disasters) {
      const auto& c = ds.centroids[ds.block_index(node.block_id)];
      const int local = d.week - node.period_id * cfg.period_stride_weeks;
      if (local >= 0 && local < cfg.weeks_per_period &&
          std::hypot(c.x - *d.x, c.y - *d.y) <= 1.5 * d.radius_m)
        inside = true;
    }
    if (!inside) CHECK(node.impact == 0.0);
    else CHECK(node.impact > 0.0);
  }
  for (const auto& e : ds.disasters)
    for (const auto& [b, s] : e.severity_by_block) CHECK(s > 0.0);
}

TEST_CASE("visits drop across a disaster inside its footprint") {
  auto cfg = scenarios::small();
  cfg.confounder_rate = 0.0;
  const auto sc = synth::generate(cfg);
  const auto& ds = sc.dataset;
  for (const auto& e : ds.disasters) {
    double before = 0.0, after = 0.0;
    for (const auto& [block, s] : e.severity_by_block) {
      if (s < 0.5) continue;
      for (std::size_t j : ds.pois_by_block()[ds.block_index(block)]) {
        before += static_cast<double>(ds.pois[j].visits[static_cast<std::size_t>(e.week - 1)]);
        after += static_cast<double>(ds.pois[j].visits[static_cast<std::size_t>(e.week + 1)]);
      }
    }
    INFO("event " << e.event_id);
    CHECK(after < before);
  }
}

TEST_CASE("scenario config validation and json round trip") {
  auto cfg = synth::ScenarioConfig::reference();
  nlohmann::json j = cfg;
  const auto back = j.get<synth::ScenarioConfig>();
  CHECK(nlohmann::json(back) == j);
  cfg.class_proportions = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = synth::ScenarioConfig::reference();
  cfg.disasters.push_back({10000, 1.0, 100.0, {}, {}});
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = synth::ScenarioConfig::reference();
  cfg.a_plus = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
