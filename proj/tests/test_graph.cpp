#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "gen.hpp"
#include "sta4clc/error.hpp"
#include "sta4clc/graph.hpp"

using namespace sta4clc;
using namespace sta4clc::graph;

namespace {

std::vector<data::Point> random_points(gen::Rng& rng, std::size_t n) {
  std::vector<data::Point> pts(n);
  for (auto& p : pts) p = {rng.uniform(0, 1000), rng.uniform(0, 1000)};
  return pts;
}

}  // namespace

TEST_CASE("knn on collinear points") {
  const std::vector<data::Point> pts{{0, 0}, {1, 0}, {2, 0}};
  const auto rel = knn_adjacency(pts, 1);
  // Node 2's nearest is 1; node 1 ties between 0 and 2 and takes the lower index.
  REQUIRE(rel.edges.size() == 2);
  CHECK(rel.edges[0] == Edge{0, 1, 1.0});
  CHECK(rel.edges[1] == Edge{1, 2, 1.0});
}

TEST_CASE("knn matches a brute-force neighbour search") {
  gen::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(2, 60));
    const std::size_t k = static_cast<std::size_t>(rng.integer(1, 12));
    const auto pts = random_points(rng, n);
    std::set<std::pair<std::size_t, std::size_t>> expected;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) d.emplace_back(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y), j);
      std::sort(d.begin(), d.end());
      for (std::size_t r = 0; r < std::min(k, d.size()); ++r)
        expected.emplace(std::min(i, d[r].second), std::max(i, d[r].second));
    }
    const auto rel = knn_adjacency(pts, k);
    CHECK_NOTHROW(rel.validate(n));
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& e : rel.edges) {
      got.emplace(e.i, e.j);
      const double d = std::hypot(pts[e.i].x - pts[e.j].x, pts[e.i].y - pts[e.j].y);
      CHECK(e.weight == doctest::Approx(1.0 / std::max(d, 1.0)));
    }
    CHECK(got == expected);
  }
}

TEST_CASE("knn clamps coincident centroids to the minimum distance") {
  const std::vector<data::Point> pts{{5, 5}, {5, 5}};
  const auto rel = knn_adjacency(pts, 1);
  REQUIRE(rel.edges.size() == 1);
  CHECK(rel.edges[0].weight == 1.0);
}

TEST_CASE("gravity weight examples") {
  CHECK(gravity_weight(100, 50, 10) == doctest::Approx(50.0));
  CHECK(gravity_weight(100, 50, 20) == doctest::Approx(12.5));
  CHECK(gravity_weight(100, 50, 0.0) == doctest::Approx(5000.0));
}

TEST_CASE("relation validation") {
  Relation r{"x", {{0, 1, 1.0}, {1, 2, 0.5}}};
  CHECK_NOTHROW(r.validate(3));
  CHECK_THROWS_AS(r.validate(2), DataError);
  r.edges.push_back({1, 1, 1.0});
  CHECK_THROWS_AS(r.validate(3), DataError);
  r.edges.back() = {1, 2, 2.0};
  CHECK_THROWS_AS(r.validate(3), DataError);
  r.edges.back() = {2, 0, 1.0};
  CHECK_THROWS_AS(r.validate(3), DataError);
  r.edges.back() = {0, 2, 0.0};
  CHECK_THROWS_AS(r.validate(3), DataError);
  const Relation ok{"y", {{0, 2, 1.0}}};
  CHECK(ok.incident(4) == std::vector<unsigned char>{1, 0, 1, 0});
}

TEST_CASE("sector relations: threshold, naming, cap and gravity weights") {
  const std::vector<data::Point> pts{{0, 0}, {10, 0}, {20, 0}, {30, 0}, {0, 10}};
  SectorProfile a{722, {1, 1, 1, 0, 0}, {100, 50, 10, 0, 0}};
  SectorProfile b{445, {1, 1, 1, 1, 1}, {1, 1, 1, 1, 1}};
  SectorProfile c{311, {1, 0, 0, 0, 1}, {1, 0, 0, 0, 1}};
  const std::vector<SectorProfile> profiles{a, b, c};
  SectorOptions opts;
  opts.min_blocks = 2;
  opts.edge_cap = 0;
  const auto rels = sector_relations(pts, profiles, opts);
  REQUIRE(rels.size() == 2);
  CHECK(rels[0].name == "sector_445");
  CHECK(rels[1].name == "sector_722");
  CHECK(rels[0].edges.size() == 10);
  REQUIRE(rels[1].edges.size() == 3);
  CHECK(rels[1].edges[0] == Edge{0, 1, 100.0 * 50 / 100});
  CHECK(rels[1].edges[1].weight == doctest::Approx(100.0 * 10 / 400));
  CHECK(rels[1].edges[2].weight == doctest::Approx(50.0 * 10 / 100));

  opts.edge_cap = 1;
  const auto capped = sector_relations(pts, profiles, opts);
  // Each member keeps its strongest partner: 0-1, 1-0 and 2-1.
  CHECK(capped[1].edges.size() == 2);
  for (const auto& r : capped) CHECK_NOTHROW(r.validate(pts.size()));
}

TEST_CASE("sector relations drop zero-weight pairs") {
  const std::vector<data::Point> pts{{0, 0}, {1, 0}, {2, 0}, {3, 0}};
  const std::vector<SectorProfile> profiles{{722, {1, 1, 1, 1}, {0, 5, 5, 0}}};
  SectorOptions opts;
  opts.min_blocks = 1;
  const auto rels = sector_relations(pts, profiles, opts);
  REQUIRE(rels.size() == 1);
  REQUIRE(rels[0].edges.size() == 1);
  CHECK(rels[0].edges[0].i == 1);
  CHECK(rels[0].edges[0].j == 2);
}

TEST_CASE("laplacian of a 3-node path") {
  const Relation path{"adjacency", {{0, 1, 1.0}, {1, 2, 1.0}}};
  const Laplacian L(path, 3);
  CHECK(L.degree() == std::vector<double>{1, 2, 1});
  const auto d = L.dense();
  const std::vector<double> expected{1, -1, 0, -1, 2, -1, 0, -1, 1};
  CHECK(d == expected);
  const std::vector<double> x{1, 2, 4};
  CHECK(L.apply(x) == std::vector<double>{-1, -1, 2});
}

TEST_CASE("laplacian rows sum to zero and apply matches the dense form") {
  gen::Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(2, 40));
    const auto pts = random_points(rng, n);
    const auto rel = knn_adjacency(pts, 4);
    const Laplacian L(rel, n);
    const auto dense = L.dense();
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto y = L.apply(x);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0, yi = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += dense[i * n + j];
        yi += dense[i * n + j] * x[j];
        CHECK(dense[i * n + j] == dense[j * n + i]);
      }
      CHECK(std::abs(row) <= 1e-9);
      CHECK(yi == doctest::Approx(y[i]).epsilon(1e-12));
      quad += x[i] * y[i];
    }
    CHECK(quad >= -1e-12);
  }
}

TEST_CASE("build_multigraph puts adjacency first and validates") {
  const std::vector<data::Point> pts{{0, 0}, {1, 0}, {2, 0}};
  auto adj = knn_adjacency(pts, 1);
  std::vector<Relation> sectors{{"sector_722", {{0, 2, 3.0}}}};
  const auto g = build_multigraph(adj, sectors, 3);
  CHECK(g.relation_count() == 2);
  CHECK(g.adjacency().name == "adjacency");
  std::vector<Relation> bad{{"sector_1", {{0, 5, 1.0}}}};
  CHECK_THROWS_AS(build_multigraph(adj, bad, 3), DataError);
}

TEST_CASE("replicate offsets node indices per copy") {
  const std::vector<data::Point> pts{{0, 0}, {1, 0}, {2, 0}};
  const auto g = build_multigraph(knn_adjacency(pts, 1), {}, 3);
  const auto r = replicate(g, 2);
  CHECK(r.n_nodes == 6);
  REQUIRE(r.adjacency().edges.size() == 4);
  CHECK(r.adjacency().edges[2] == Edge{3, 4, 1.0});
  CHECK(r.adjacency().edges[3] == Edge{4, 5, 1.0});
}

TEST_CASE("graph json round trip") {
  gen::Rng rng(8);
  const auto pts = random_points(rng, 12);
  std::vector<Relation> sectors{{"sector_722", {{0, 3, 0.125}, {2, 11, 1.0 / 3.0}}}};
  const auto g = build_multigraph(knn_adjacency(pts, 3), sectors, 12);
  fixtures::TempDir dir;
  write_graph_json(g, dir / "graph.json");
  const auto back = read_graph_json(dir / "graph.json");
  CHECK(back.n_nodes == g.n_nodes);
  REQUIRE(back.relations.size() == g.relations.size());
  for (std::size_t r = 0; r < g.relations.size(); ++r) {
    CHECK(back.relations[r].name == g.relations[r].name);
    CHECK(back.relations[r].edges == g.relations[r].edges);
  }
  dir.write("bad.json", "{\"n_nodes\": 2, \"relations\": [{\"name\": \"adjacency\", \"edges\": [[0, 7, 1.0]]}]}");
  CHECK_THROWS_AS(read_graph_json(dir / "bad.json"), DataError);
}
