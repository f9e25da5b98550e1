#pragma once

// Multi-relational block graph: inverse-distance k-NN adjacency, per-sector
// gravity competition relations and the adjacency Laplacian.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sta4clc/data.hpp"

namespace sta4clc::graph {

/// Undirected weighted edge, i < j.
struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Relation {
  std::string name;
  std::vector<Edge> edges;  // sorted by (i, j)

  /// Throws DataError on self-loops, duplicates, i >= j, endpoints out of
  /// range or non-positive/non-finite weights.
  void validate(std::size_t n_nodes) const;
  /// Nodes incident to at least one edge.
  std::vector<unsigned char> incident(std::size_t n_nodes) const;
};

struct MultiRelationalGraph {
  std::size_t n_nodes = 0;
  std::vector<Relation> relations;  // adjacency first

  std::size_t relation_count() const { return relations.size(); }
  const Relation& adjacency() const { return relations.front(); }
};

inline constexpr double kMinDistance = 1.0;  // meters

/// Each node links to its k nearest centroids; the directed sets are
/// symmetrized. weight = 1 / max(distance, min_distance).
Relation knn_adjacency(std::span<const data::Point> centroids, std::size_t k = 10,
                       double min_distance = kMinDistance);

/// Per-sector visit totals over blocks.
struct SectorProfile {
  int naics = 0;
  std::vector<unsigned char> present;  // block hosts >= 1 POI of the sector
  std::vector<double> visits;          // V_i^(k)
};

/// Totals over the whole visit record of each POI.
std::vector<SectorProfile> sector_profiles(const data::Dataset& dataset);

struct SectorOptions {
  std::size_t min_blocks = 20;  // a sector qualifies with strictly more blocks
  std::size_t edge_cap = 15;    // top-m edges per node and sector; 0 disables
  double min_distance = kMinDistance;
};

/// Gravity weight V_i V_j / max(d, min_distance)^2.
double gravity_weight(double visits_i, double visits_j, double distance, double min_distance = kMinDistance);

/// One relation "sector_<naics>" per qualifying sector, ascending NAICS.
std::vector<Relation> sector_relations(std::span<const data::Point> centroids,
                                       std::span<const SectorProfile> profiles, const SectorOptions& options = {});

MultiRelationalGraph build_multigraph(Relation adjacency, std::vector<Relation> sectors, std::size_t n_nodes);

/// L = D - W for the symmetric weighted adjacency.
class Laplacian {
 public:
  Laplacian(const Relation& adjacency, std::size_t n_nodes);

  std::size_t size() const { return degree_.size(); }
  const std::vector<double>& degree() const { return degree_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<double> apply(std::span<const double> x) const;
  /// Row-major dense n x n copy.
  std::vector<double> dense() const;

 private:
  std::vector<double> degree_;
  std::vector<Edge> edges_;
};

/// Replicates the graph once per period: node b of copy p becomes
/// p * n_nodes + b.
MultiRelationalGraph replicate(const MultiRelationalGraph& g, std::size_t copies);

void write_graph_json(const MultiRelationalGraph& g, const std::filesystem::path& path);
MultiRelationalGraph read_graph_json(const std::filesystem::path& path);

}  // namespace sta4clc::graph
