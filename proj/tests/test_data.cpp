#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "gen.hpp"
#include "sta4clc/csv.hpp"
#include "sta4clc/data.hpp"
#include "sta4clc/error.hpp"

using namespace sta4clc;
using data::ChangeClass;

namespace {

// Three blocks, one period of T = 3 weeks.
void write_minimal(const fixtures::TempDir& dir, const std::string& pois_override = {}) {
  dir.write("blocks.csv",
            "block_id,cx,cy,z_0,z_1,period_id,y_start,y_end\n"
            "B1,0,0,1.0,2.0,0,0.10,0.10\n"
            "B2,10,0,0.5,1.0,0,0.05,0.12\n"
            "B3,20,0,0.0,0.0,0,0.30,0.20\n");
  dir.write("pois.csv", pois_override.empty() ? "poi_id,block_id,naics3,w0,w1,w2\n"
                                                "P1,B1,722,1,2,3\n"
                                                "P2,B1,445,4,5,6\n"
                                                "P3,B2,722,0,3,0\n"
                                              : pois_override);
  std::ostringstream w;
  w << "block_id,day_index,precip,wind,pressure\n";
  for (const char* b : {"B1", "B2", "B3"})
    for (int d = 0; d < 21; ++d) w << b << ',' << d << ",1.0," << (d % 7) << ",1013\n";
  dir.write("weather.csv", w.str());
  dir.write("disasters.csv", "event_id,week,block_id,severity\nE1,1,B1,0.5\nE1,1,B2,0.25\n");
}

data::DatasetOptions three_weeks() {
  data::DatasetOptions o;
  o.weeks_per_period = 3;
  return o;
}

}  // namespace

TEST_CASE("load_dataset reads a minimal well-formed directory") {
  fixtures::TempDir dir;
  write_minimal(dir);
  const auto ds = data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks());
  CHECK(ds.n_blocks() == 3);
  CHECK(ds.records.size() == 3);
  CHECK(ds.attribute_dim() == 2);
  CHECK(ds.pois.size() == 3);
  CHECK(ds.pois_by_block()[0].size() == 2);
  CHECK(ds.pois_by_block()[2].empty());
  REQUIRE(ds.disasters.size() == 1);
  CHECK(ds.disasters[0].severity_by_block.at("B2") == doctest::Approx(0.25));
  CHECK(ds.total_weeks == 3);
}

TEST_CASE("load_dataset names an unknown block and its row") {
  fixtures::TempDir dir;
  write_minimal(dir, "poi_id,block_id,naics3,w0,w1,w2\nP1,B1,722,1,2,3\nP9,B999,722,1,1,1\n");
  try {
    data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("B999") != std::string::npos);
    CHECK(msg.find("pois.csv:3") != std::string::npos);
  }
}

TEST_CASE("load_dataset rejects a visit series of the wrong length") {
  fixtures::TempDir dir;
  write_minimal(dir);
  auto opts = three_weeks();
  opts.weeks_per_period = 104;
  CHECK_THROWS_AS(data::load_dataset(data::DatasetPaths::in_directory(dir.path()), opts), DataError);
}

TEST_CASE("load_dataset rejects missing files and non-numeric cells") {
  fixtures::TempDir dir;
  CHECK_THROWS_AS(data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks()), DataError);
  write_minimal(dir, "poi_id,block_id,naics3,w0,w1,w2\nP1,B1,722,1,nan,3\n");
  CHECK_THROWS_AS(data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks()), DataError);
}

TEST_CASE("shares outside [0,1] are clamped on ingest") {
  fixtures::TempDir dir;
  write_minimal(dir);
  dir.write("blocks.csv", "block_id,cx,cy,z_0,period_id,y_start,y_end\nB1,0,0,1,0,-0.2,1.5\nB2,1,0,1,0,0.1,0.1\nB3,2,0,1,0,0,0\n");
  const auto ds = data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks());
  CHECK(ds.records[0].y_start == 0.0);
  CHECK(ds.records[0].y_end == 1.0);
}

TEST_CASE("aggregate_block_series sums visits and counts active POIs") {
  fixtures::TempDir dir;
  write_minimal(dir);
  const auto ds = data::load_dataset(data::DatasetPaths::in_directory(dir.path()), three_weeks());
  const auto b1 = data::aggregate_block_series(ds, "B1", 0);
  CHECK(b1.visits == std::vector<std::int64_t>{5, 7, 9});
  CHECK(b1.active_pois == std::vector<std::int64_t>{2, 2, 2});
  const auto b2 = data::aggregate_block_series(ds, "B2", 0);
  CHECK(b2.active_pois == std::vector<std::int64_t>{0, 1, 0});
  const auto b3 = data::aggregate_block_series(ds, "B3", 0);
  CHECK(b3.visits == std::vector<std::int64_t>{0, 0, 0});
  CHECK(b3.active_pois == std::vector<std::int64_t>{0, 0, 0});
  CHECK_THROWS_AS(data::aggregate_block_series(ds, "nope", 0), DataError);
}

TEST_CASE("aggregate_block_series matches a recount of the raw table") {
  gen::Rng rng(7);
  fixtures::TempDir dir;
  const int T = 6;
  std::ostringstream pois;
  pois << "poi_id,block_id,naics3";
  for (int t = 0; t < T; ++t) pois << ",w" << t;
  pois << '\n';
  std::map<std::string, std::vector<std::vector<long>>> raw;
  for (int j = 0; j < 40; ++j) {
    const std::string b = "B" + std::to_string(rng.integer(1, 3));
    pois << "P" << j << ',' << b << ",722";
    std::vector<long> series;
    for (int t = 0; t < T; ++t) {
      const long v = rng.coin(0.3) ? 0 : rng.integer(0, 50);
      series.push_back(v);
      pois << ',' << v;
    }
    raw[b].push_back(series);
    pois << '\n';
  }
  write_minimal(dir, pois.str());
  std::ostringstream w;
  w << "block_id,day_index,precip,wind,pressure\n";
  for (const char* b : {"B1", "B2", "B3"})
    for (int d = 0; d < 7 * T; ++d) w << b << ',' << d << ",0,0,1000\n";
  dir.write("weather.csv", w.str());
  data::DatasetOptions opts;
  opts.weeks_per_period = T;
  const auto ds = data::load_dataset(data::DatasetPaths::in_directory(dir.path()), opts);
  for (const auto& [b, rows] : raw) {
    const auto s = data::aggregate_block_series(ds, b, 0);
    for (int t = 0; t < T; ++t) {
      long v = 0, p = 0;
      for (const auto& r : rows) {
        v += r[t];
        p += r[t] >= 1;
      }
      CHECK(s.visits[t] == v);
      CHECK(s.active_pois[t] == p);
    }
  }
}

TEST_CASE("weekly_aggregate_weather applies sum, max and mean") {
  std::vector<data::DailyWeather> days(7);
  const double wind[] = {2, 9, 3, 1, 0, 4, 5};
  for (int d = 0; d < 7; ++d) days[d] = {1.0, wind[d], 1013.0};
  const auto w = data::weekly_aggregate_weather(days, 0, 1);
  REQUIRE(w.size() == 1);
  CHECK(w[0][0] == doctest::Approx(7.0));
  CHECK(w[0][1] == 9.0);
  CHECK(w[0][2] == doctest::Approx(1013.0));
}

TEST_CASE("weekly_aggregate_weather gap policy") {
  std::vector<data::DailyWeather> days(14, {1.0, 1.0, 1000.0});
  days[3] = {NAN, NAN, NAN};
  CHECK_THROWS_AS(data::weekly_aggregate_weather(days, 0, 2), DataError);
  data::WeatherGapPolicy policy{2};
  days[4] = {NAN, NAN, NAN};
  days[5] = {3.0, 3.0, 1006.0};
  const auto w = data::weekly_aggregate_weather(days, 0, 2, policy);
  // Days 3 and 4 interpolate between day 2 (1.0) and day 5 (3.0).
  CHECK(w[0][0] == doctest::Approx(1 + 1 + 1 + (1 + 2.0 / 3) + (1 + 4.0 / 3) + 3 + 1));
  days[6] = {NAN, NAN, NAN};
  days[7] = {NAN, NAN, NAN};
  days[8] = {NAN, NAN, NAN};
  CHECK_THROWS_AS(data::weekly_aggregate_weather(days, 0, 2, policy), DataError);
  CHECK_THROWS_AS(data::weekly_aggregate_weather(days, 7, 2, policy), DataError);
}

TEST_CASE("derive_label examples") {
  const data::LabelConfig cfg;
  CHECK(cfg.epsilon == 1e-5);
  CHECK(data::derive_label(0.10, 0.10, cfg) == ChangeClass::NoChange);
  CHECK(data::derive_label(0.05, 0.12, cfg) == ChangeClass::Increase);
  CHECK(data::derive_label(0.30, 0.299995, cfg) == ChangeClass::NoChange);
  CHECK(data::derive_label(0.30, 0.20, cfg) == ChangeClass::Decrease);
}

TEST_CASE("standardizer examples") {
  data::FeatureMatrix m{3, 2, {1, 5, 2, 5, 3, 5}};
  const std::vector<std::size_t> rows{0, 1, 2};
  const auto s = data::Standardizer::fit(m, rows);
  CHECK(s.mean[0] == doctest::Approx(2.0));
  CHECK(s.sd[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  auto copy = m;
  s.apply(copy);
  CHECK(copy.at(1, 0) == 0.0);
  CHECK(copy.at(0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0 / 3.0)));
  CHECK(copy.at(0, 1) == 0.0);
  CHECK(copy.at(2, 1) == 0.0);

  // Population sd of [1, 3] is 1, so the column [1,2,3] hand example
  // corresponds to mean 2, sd 1 on the rows {0, 2}.
  const std::vector<std::size_t> ends{0, 2};
  const auto s2 = data::Standardizer::fit(m, ends);
  CHECK(s2.mean[0] == doctest::Approx(2.0));
  CHECK(s2.sd[0] == doctest::Approx(1.0));
  CHECK(s2.transform(0, 1.0) == doctest::Approx(-1.0));
  CHECK(s2.transform(0, 3.0) == doctest::Approx(1.0));
  CHECK(s2.transform(0, 4.0) == doctest::Approx(2.0));

  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(data::Standardizer::fit(m, none), DataError);
}

TEST_CASE("resample_balanced examples") {
  std::vector<ChangeClass> labels;
  for (int i = 0; i < 2; ++i) labels.push_back(ChangeClass::Increase);
  for (int i = 0; i < 10; ++i) labels.push_back(ChangeClass::NoChange);
  for (int i = 0; i < 3; ++i) labels.push_back(ChangeClass::Decrease);
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto out = data::resample_balanced(idx, labels, 3);
  std::array<int, 3> counts{};
  for (auto i : out) ++counts[static_cast<int>(labels[i])];
  CHECK(counts == std::array<int, 3>{10, 10, 10});
  CHECK(out == data::resample_balanced(idx, labels, 3));

  std::vector<ChangeClass> balanced;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i) balanced.push_back(static_cast<ChangeClass>(c));
  std::vector<std::size_t> all(15);
  for (std::size_t i = 0; i < 15; ++i) all[i] = i;
  CHECK(data::resample_balanced(all, balanced, 1).size() == 15);

  const std::vector<std::size_t> only_no{2, 3, 4};
  CHECK_THROWS_AS(data::resample_balanced(only_no, labels, 1), DataError);
}

TEST_CASE("csv split_line and format_double") {
  CHECK(csv::split_line("a,\"b,c\",d") == std::vector<std::string>{"a", "b,c", "d"});
  CHECK(csv::format_double(0.1) == "0.1");
  for (double v : {1.0 / 3.0, 1e-300, 123456.789, -0.0})
    CHECK(std::stod(csv::format_double(v)) == v);
}
