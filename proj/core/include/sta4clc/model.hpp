#pragma once

// The spatio-temporal network: disaster-biased temporal self-attention,
// relation-aware graph attention, fusion, regression/classification heads
// and the composite loss with the bidirectional diffusion term.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sta4clc/autodiff.hpp"
#include "sta4clc/data.hpp"
#include "sta4clc/graph.hpp"
#include "sta4clc/resilience.hpp"

namespace sta4clc::model {

inline constexpr std::size_t kTemporalChannels = 6;  // v, p, r, w1, w2, w3

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t attention_heads = 4;
  std::size_t gat_heads = 2;
  double leaky_slope = 0.2;
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  double lambda_diff = 0.05;
  bool use_disaster_bias = true;
  bool use_diffusion_loss = true;
  bool use_multi_relation = true;
  bool share_gat_parameters = false;
  int epochs = 200;
  double lr = 0.005;
  std::uint64_t seed = 42;
  double alpha_half_life_weeks = 4.0;  // initial decay rate = ln 2 / half-life
  double diffusion_init = 0.1;         // initial a+ and a-

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Standardized per-node inputs for one forward pass. Nodes are
/// (block, period) pairs.
struct ModelInputs {
  std::size_t n_nodes = 0;
  std::size_t weeks = 0;
  ad::Array temporal;    // [N, T, 6]
  ad::Array attributes;  // [N, d]
  std::vector<std::vector<resilience::Impulse>> impulses;  // per node
};

/// Directed edge lists (both directions plus one self-loop per node) and
/// scalar edge features, prepared once per graph.
struct RelationTensors {
  std::string name;
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
  ad::Array edge_feature;               // [E, 1]
  std::vector<unsigned char> incident;  // node has >= 1 real edge
};

struct GraphTensors {
  std::size_t n_nodes = 0;
  std::vector<RelationTensors> relations;  // adjacency first
  // Adjacency Laplacian as directed weighted edges plus degrees.
  std::vector<std::size_t> lap_source;
  std::vector<std::size_t> lap_target;
  ad::Array lap_weight;  // [E, 1]
  ad::Array lap_degree;  // [N, 1]
};

/// Edge feature = log1p(weight) scaled by the relation's maximum; self-loops
/// carry feature 0.
GraphTensors prepare_graph(const graph::MultiRelationalGraph& g);

struct GatHead {
  ad::Var weight;    // [H, H]
  ad::Var att_self;  // [H, 1], applied to the receiving node
  ad::Var att_nbr;   // [H, 1], applied to the neighbor
  ad::Var edge;      // [1], edge-feature coefficient
};

struct RelationParams {
  std::vector<GatHead> heads;
  ad::Var embedding;  // [H], shared-parameter mode only
};

struct ModelParameters {
  ad::Var in_weight, in_bias;                  // [6, H], [H]
  std::vector<ad::Var> query, key, value;      // per head [H, H / heads]
  ad::Var out_weight, out_bias;                // [H, H], [H]
  ad::Var alpha_raw;                           // [1], alpha = softplus(alpha_raw)
  ad::Var node_weight, node_bias;              // [d + H, H], [H]
  std::vector<RelationParams> relations;       // one per relation (or one shared)
  ad::Var rel_weight, rel_vector;              // [H, H], [H, 1]
  ad::Var fuse_weight, fuse_bias;              // [2H, H], [H]
  ad::Var reg_weight, reg_bias;                // [H, 1], [1]
  ad::Var cls_weight, cls_bias;                // [H, 3], [3]
  ad::Var a_plus, a_minus;                     // [1]

  /// Builds and initializes every tensor (Glorot uniform, zero biases) from
  /// the config seed. relation_count is the graph's R.
  static ModelParameters init(const ModelConfig& config, std::size_t attribute_dim, std::size_t relation_count);

  /// Every learnable tensor in a fixed order.
  std::vector<ad::Var> all() const;
  double alpha() const;

  void write_binary(std::ostream& out) const;
  void read_binary(std::istream& in);
  nlohmann::json manifest() const;
  ModelParameters clone() const;
  void copy_values_from(const ModelParameters& other);
};

/// Sinusoidal positional encoding [T, H].
ad::Array positional_encoding(std::size_t weeks, std::size_t hidden);

/// D for every node as a [N, 1, T] node differentiable in alpha.
ad::Var decay_bias(const ad::Var& alpha, const std::vector<std::vector<resilience::Impulse>>& impulses,
                   std::size_t weeks);

/// softmax(scale * Q K^T + bias) V per batch entry. bias is [B, 1, T] or
/// empty. The probabilities are kept for inspection when probs is non-null.
ad::Var scaled_dot_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, const ad::Var& bias, double scale,
                             std::shared_ptr<const ad::Array>* probs = nullptr);

/// Mean over query rows of scaled_dot_attention, [B, dv], computed without
/// materializing the per-row context.
ad::Var pooled_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, const ad::Var& bias, double scale,
                         std::shared_ptr<const ad::Array>* probs = nullptr);

struct TemporalTrace {
  bool keep_attention = false;  // attention maps cost N * T * T per head
  std::vector<std::shared_ptr<const ad::Array>> attention;  // per head [N, T, T]
  ad::Var decay;                                            // [N, 1, T] (empty when disabled)
};

/// h_temp [N, H].
ad::Var temporal_encode(const ModelInputs& inputs, const ModelParameters& params, const ModelConfig& config,
                        TemporalTrace* trace = nullptr);

/// One relation's GAT output [N, H] (heads averaged). attention receives the
/// per-head edge weights aligned with rel.source/target.
ad::Var gat_relation(const ad::Var& h, const RelationTensors& rel, const RelationParams& params,
                     const ModelConfig& config, std::vector<ad::Var>* attention = nullptr);

/// Relation-level soft attention. Returns h_spatial [N, H]; weights receives
/// the [N, R] relation weights.
ad::Var relation_aggregate(const std::vector<ad::Var>& per_relation, const std::vector<const RelationTensors*>& rels,
                           const ModelParameters& params, ad::Var* weights = nullptr);

struct ForwardResult {
  ad::Var delta_y;     // [N, 1], tanh output
  ad::Var logits;      // [N, 3]
  ad::Var h_temp;      // [N, H]
  ad::Var h_spatial;   // [N, H]
  ad::Var relation_weights;  // [N, R_used]
  TemporalTrace temporal;
  std::vector<std::vector<ad::Var>> gat_attention;  // [relation][head]

  std::vector<data::ChangeClass> classes() const;
};

ForwardResult forward(const ModelInputs& inputs, const GraphTensors& graph, const ModelParameters& params,
                      const ModelConfig& config, bool keep_attention = false);

/// lambda * (mean of squared positive-side residuals + mean of negative-side
/// residuals); nodes with delta exactly 0 are excluded.
ad::Var diffusion_loss(const ad::Var& delta_y, const GraphTensors& graph, const ad::Var& a_plus,
                       const ad::Var& a_minus, double lambda);

/// Supervision for one loss evaluation. weight[i] is the multiplicity of
/// node i in the (resampled) training multiset.
struct Targets {
  std::vector<data::ChangeClass> labels;
  std::vector<double> delta;
  std::vector<double> weight;
};

struct LossTerms {
  ad::Var total;
  double cls = 0.0;
  double reg = 0.0;
  double diff = 0.0;
};

LossTerms total_loss(const ForwardResult& fwd, const Targets& targets, const GraphTensors& graph,
                     const ModelParameters& params, const ModelConfig& config);

}  // namespace sta4clc::model
