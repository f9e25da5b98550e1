#include "sta4clc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "sta4clc/error.hpp"

namespace sta4clc::graph {

namespace {

double distance(const data::Point& a, const data::Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void sort_edges(std::vector<Edge>& edges) {
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
}

}  // namespace

void Relation::validate(std::size_t n_nodes) const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges) {
    if (e.i >= n_nodes || e.j >= n_nodes)
      throw DataError("relation '" + name + "': endpoint (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                      ") out of range for " + std::to_string(n_nodes) + " nodes");
    if (e.i == e.j) throw DataError("relation '" + name + "': self-loop at node " + std::to_string(e.i));
    if (e.i > e.j) throw DataError("relation '" + name + "': edge endpoints must satisfy i < j");
    if (!std::isfinite(e.weight) || !(e.weight > 0.0))
      throw DataError("relation '" + name + "': non-positive weight on edge (" + std::to_string(e.i) + ", " +
                      std::to_string(e.j) + ")");
    if (!seen.emplace(e.i, e.j).second)
      throw DataError("relation '" + name + "': duplicate edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                      ")");
  }
}

std::vector<unsigned char> Relation::incident(std::size_t n_nodes) const {
  std::vector<unsigned char> out(n_nodes, 0);
  for (const auto& e : edges) out[e.i] = out[e.j] = 1;
  return out;
}

Relation knn_adjacency(std::span<const data::Point> centroids, std::size_t k, double min_distance) {
  const std::size_t n = centroids.size();
  if (n < 2) throw DataError("knn_adjacency: need at least two blocks, got " + std::to_string(n));
  for (const auto& c : centroids)
    if (!std::isfinite(c.x) || !std::isfinite(c.y)) throw DataError("knn_adjacency: non-finite centroid");
  const std::size_t kk = std::min(k, n - 1);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> order(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = distance(centroids[i], centroids[j]);
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; });
    for (std::size_t r = 0; r < kk; ++r) pairs.emplace(std::min(i, order[r]), std::max(i, order[r]));
  }
  Relation rel{"adjacency", {}};
  rel.edges.reserve(pairs.size());
  for (auto [i, j] : pairs)
    rel.edges.push_back({i, j, 1.0 / std::max(distance(centroids[i], centroids[j]), min_distance)});
  return rel;
}

std::vector<SectorProfile> sector_profiles(const data::Dataset& dataset) {
  std::map<int, SectorProfile> by_sector;
  const std::size_t n = dataset.n_blocks();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t j : dataset.pois_by_block()[b]) {
      const auto& poi = dataset.pois[j];
      auto [it, fresh] = by_sector.try_emplace(poi.sector);
      if (fresh) {
        it->second.naics = poi.sector;
        it->second.present.assign(n, 0);
        it->second.visits.assign(n, 0.0);
      }
      it->second.present[b] = 1;
      for (auto v : poi.visits) it->second.visits[b] += static_cast<double>(v);
    }
  }
  std::vector<SectorProfile> out;
  for (auto& [naics, p] : by_sector) out.push_back(std::move(p));
  return out;
}

double gravity_weight(double visits_i, double visits_j, double dist, double min_distance) {
  const double d = std::max(dist, min_distance);
  return visits_i * visits_j / (d * d);
}

std::vector<Relation> sector_relations(std::span<const data::Point> centroids,
                                       std::span<const SectorProfile> profiles, const SectorOptions& options) {
  const std::size_t n = centroids.size();
  std::vector<const SectorProfile*> sorted;
  for (const auto& p : profiles) sorted.push_back(&p);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SectorProfile* a, const SectorProfile* b) { return a->naics < b->naics; });

  std::vector<Relation> out;
  for (const SectorProfile* prof : sorted) {
    if (prof->present.size() != n || prof->visits.size() != n)
      throw DataError("sector " + std::to_string(prof->naics) + ": profile size differs from block count");
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < n; ++b)
      if (prof->present[b]) members.push_back(b);
    if (members.size() <= options.min_blocks) {
      std::clog << "sector " << prof->naics << ": " << members.size() << " blocks, not above threshold "
                << options.min_blocks << "; skipped\n";
      continue;
    }
    // Candidate weights per member, zero-weight pairs dropped.
    std::map<std::pair<std::size_t, std::size_t>, double> kept;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t a = 0; a < members.size(); ++a) {
      const std::size_t i = members[a];
      cand.clear();
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (c == a) continue;
        const std::size_t j = members[c];
        const double w =
            gravity_weight(prof->visits[i], prof->visits[j], distance(centroids[i], centroids[j]), options.min_distance);
        if (w > 0.0 && std::isfinite(w)) cand.emplace_back(w, j);
      }
      std::size_t take = cand.size();
      if (options.edge_cap > 0 && cand.size() > options.edge_cap) {
        take = options.edge_cap;
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                          [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
      }
      for (std::size_t r = 0; r < take; ++r) kept.emplace(std::make_pair(std::min(i, cand[r].second), std::max(i, cand[r].second)), cand[r].first);
    }
    Relation rel{"sector_" + std::to_string(prof->naics), {}};
    for (const auto& [key, w] : kept) rel.edges.push_back({key.first, key.second, w});
    out.push_back(std::move(rel));
  }
  return out;
}

MultiRelationalGraph build_multigraph(Relation adjacency, std::vector<Relation> sectors, std::size_t n_nodes) {
  MultiRelationalGraph g;
  g.n_nodes = n_nodes;
  std::stable_sort(sectors.begin(), sectors.end(), [](const Relation& a, const Relation& b) {
    auto key = [](const Relation& r) {
      const auto pos = r.name.rfind('_');
      return pos == std::string::npos ? 0 : std::atoi(r.name.c_str() + pos + 1);
    };
    return key(a) < key(b);
  });
  g.relations.push_back(std::move(adjacency));
  for (auto& s : sectors) g.relations.push_back(std::move(s));
  std::set<std::string> names;
  for (auto& r : g.relations) {
    if (!names.insert(r.name).second) throw DataError("duplicate relation name '" + r.name + "'");
    sort_edges(r.edges);
    r.validate(n_nodes);
  }
  return g;
}

Laplacian::Laplacian(const Relation& adjacency, std::size_t n_nodes) : degree_(n_nodes, 0.0), edges_(adjacency.edges) {
  for (const auto& e : edges_) {
    if (e.i >= n_nodes || e.j >= n_nodes) throw DataError("laplacian: endpoint out of range");
    degree_[e.i] += e.weight;
    degree_[e.j] += e.weight;
  }
}

std::vector<double> Laplacian::apply(std::span<const double> x) const {
  std::vector<double> out(degree_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = degree_[i] * x[i];
  for (const auto& e : edges_) {
    out[e.i] -= e.weight * x[e.j];
    out[e.j] -= e.weight * x[e.i];
  }
  return out;
}

std::vector<double> Laplacian::dense() const {
  const std::size_t n = degree_.size();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = degree_[i];
  for (const auto& e : edges_) {
    m[e.i * n + e.j] -= e.weight;
    m[e.j * n + e.i] -= e.weight;
  }
  return m;
}

MultiRelationalGraph replicate(const MultiRelationalGraph& g, std::size_t copies) {
  MultiRelationalGraph out;
  out.n_nodes = g.n_nodes * copies;
  for (const auto& r : g.relations) {
    Relation rr{r.name, {}};
    rr.edges.reserve(r.edges.size() * copies);
    for (std::size_t c = 0; c < copies; ++c)
      for (const auto& e : r.edges) rr.edges.push_back({e.i + c * g.n_nodes, e.j + c * g.n_nodes, e.weight});
    out.relations.push_back(std::move(rr));
  }
  return out;
}

void write_graph_json(const MultiRelationalGraph& g, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["n_nodes"] = g.n_nodes;
  j["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : g.relations) {
    nlohmann::ordered_json edges = nlohmann::ordered_json::array();
    for (const auto& e : r.edges) edges.push_back({e.i, e.j, e.weight});
    j["relations"].push_back({{"name", r.name}, {"edges", std::move(edges)}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

MultiRelationalGraph read_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    MultiRelationalGraph g;
    g.n_nodes = j.at("n_nodes").get<std::size_t>();
    for (const auto& r : j.at("relations")) {
      Relation rel{r.at("name").get<std::string>(), {}};
      for (const auto& e : r.at("edges"))
        rel.edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
      g.relations.push_back(std::move(rel));
    }
    if (g.relations.empty() || g.relations.front().name != "adjacency")
      throw DataError(path.string() + ": first relation must be 'adjacency'");
    std::set<std::string> names;
    for (const auto& r : g.relations) {
      if (!names.insert(r.name).second) throw DataError(path.string() + ": duplicate relation '" + r.name + "'");
      r.validate(g.n_nodes);
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed graph: " + e.what());
  }
}

}  // namespace sta4clc::graph
