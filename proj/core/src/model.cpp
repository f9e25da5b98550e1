#include "sta4clc/model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include "sta4clc/error.hpp"

namespace sta4clc::model {

using ad::Array;
using ad::Var;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Array glorot(ad::Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Array a(std::move(shape));
  for (auto& x : a.values()) x = dist(rng);
  return a;
}

Var weight(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return Var::parameter(glorot({rows, cols}, rows, cols, rng), name);
}

Var zeros(const std::string& name, ad::Shape shape) { return Var::parameter(Array(std::move(shape), 0.0), name); }

Var scalar_param(const std::string& name, double v) { return Var::parameter(Array::scalar(v), name); }

Array column(const std::vector<double>& v) { return Array({v.size(), 1}, v); }

}  // namespace

void ModelConfig::validate() const {
  if (hidden_dim == 0 || attention_heads == 0 || hidden_dim % attention_heads != 0)
    throw std::invalid_argument("hidden_dim must be a positive multiple of attention_heads");
  if (gat_heads == 0) throw std::invalid_argument("gat_heads must be positive");
  if (lambda_cls < 0.0 || lambda_reg < 0.0 || lambda_diff < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (!(alpha_half_life_weeks > 0.0)) throw std::invalid_argument("alpha half-life must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"hidden_dim", c.hidden_dim},
                     {"attention_heads", c.attention_heads},
                     {"gat_heads", c.gat_heads},
                     {"leaky_slope", c.leaky_slope},
                     {"lambda_cls", c.lambda_cls},
                     {"lambda_reg", c.lambda_reg},
                     {"lambda_diff", c.lambda_diff},
                     {"use_disaster_bias", c.use_disaster_bias},
                     {"use_diffusion_loss", c.use_diffusion_loss},
                     {"use_multi_relation", c.use_multi_relation},
                     {"share_gat_parameters", c.share_gat_parameters},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"seed", c.seed},
                     {"alpha_half_life_weeks", c.alpha_half_life_weeks},
                     {"diffusion_init", c.diffusion_init}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* known[] = {"hidden_dim",         "attention_heads",    "gat_heads",          "leaky_slope",
                                "lambda_cls",         "lambda_reg",         "lambda_diff",        "use_disaster_bias",
                                "use_diffusion_loss", "use_multi_relation", "share_gat_parameters", "epochs",
                                "lr",                 "seed",               "alpha_half_life_weeks", "diffusion_init"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known))
      throw DataError("model config: unknown key '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden_dim", c.hidden_dim);
  get("attention_heads", c.attention_heads);
  get("gat_heads", c.gat_heads);
  get("leaky_slope", c.leaky_slope);
  get("lambda_cls", c.lambda_cls);
  get("lambda_reg", c.lambda_reg);
  get("lambda_diff", c.lambda_diff);
  get("use_disaster_bias", c.use_disaster_bias);
  get("use_diffusion_loss", c.use_diffusion_loss);
  get("use_multi_relation", c.use_multi_relation);
  get("share_gat_parameters", c.share_gat_parameters);
  get("epochs", c.epochs);
  get("lr", c.lr);
  get("seed", c.seed);
  get("alpha_half_life_weeks", c.alpha_half_life_weeks);
  get("diffusion_init", c.diffusion_init);
}

GraphTensors prepare_graph(const graph::MultiRelationalGraph& g) {
  GraphTensors out;
  out.n_nodes = g.n_nodes;
  const std::size_t n = g.n_nodes;
  for (const auto& rel : g.relations) {
    RelationTensors rt;
    rt.name = rel.name;
    rt.incident = rel.incident(n);
    double max_feat = 0.0;
    for (const auto& e : rel.edges) max_feat = std::max(max_feat, std::log1p(e.weight));
    std::vector<double> feat;
    for (std::size_t i = 0; i < n; ++i) {
      rt.source.push_back(i);
      rt.target.push_back(i);
      feat.push_back(0.0);
    }
    for (const auto& e : rel.edges) {
      const double f = max_feat > 0.0 ? std::log1p(e.weight) / max_feat : 0.0;
      rt.source.push_back(e.j);
      rt.target.push_back(e.i);
      feat.push_back(f);
      rt.source.push_back(e.i);
      rt.target.push_back(e.j);
      feat.push_back(f);
    }
    rt.edge_feature = column(feat);
    out.relations.push_back(std::move(rt));
  }
  const auto& adj = g.adjacency();
  std::vector<double> w, deg(n, 0.0);
  for (const auto& e : adj.edges) {
    out.lap_source.push_back(e.j);
    out.lap_target.push_back(e.i);
    w.push_back(e.weight);
    out.lap_source.push_back(e.i);
    out.lap_target.push_back(e.j);
    w.push_back(e.weight);
    deg[e.i] += e.weight;
    deg[e.j] += e.weight;
  }
  out.lap_weight = w.empty() ? Array({1, 1}, 0.0) : column(w);
  if (w.empty()) {
    // Keep a harmless zero-weight self edge so the tensor is never empty.
    out.lap_source.push_back(0);
    out.lap_target.push_back(0);
  }
  out.lap_degree = column(deg);
  return out;
}

ModelParameters ModelParameters::init(const ModelConfig& config, std::size_t attribute_dim,
                                      std::size_t relation_count) {
  config.validate();
  const std::size_t H = config.hidden_dim, heads = config.attention_heads, dh = H / heads;
  std::mt19937_64 rng(config.seed);
  ModelParameters p;
  p.in_weight = weight("temporal.in.weight", kTemporalChannels, H, rng);
  p.in_bias = zeros("temporal.in.bias", {H});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string tag = "temporal.head" + std::to_string(h);
    p.query.push_back(weight(tag + ".query", H, dh, rng));
    p.key.push_back(weight(tag + ".key", H, dh, rng));
    p.value.push_back(weight(tag + ".value", H, dh, rng));
  }
  p.out_weight = weight("temporal.out.weight", H, H, rng);
  p.out_bias = zeros("temporal.out.bias", {H});
  const double alpha0 = std::numbers::ln2 / config.alpha_half_life_weeks;
  p.alpha_raw = scalar_param("temporal.alpha_raw", std::log(std::expm1(alpha0)));
  p.node_weight = weight("node.weight", attribute_dim + H, H, rng);
  p.node_bias = zeros("node.bias", {H});
  const std::size_t sets = config.share_gat_parameters ? 1 : relation_count;
  for (std::size_t r = 0; r < sets; ++r) {
    RelationParams rp;
    const std::string tag = "gat.rel" + std::to_string(r);
    for (std::size_t h = 0; h < config.gat_heads; ++h) {
      const std::string ht = tag + ".head" + std::to_string(h);
      GatHead g;
      g.weight = weight(ht + ".weight", H, H, rng);
      g.att_self = weight(ht + ".att_self", H, 1, rng);
      g.att_nbr = weight(ht + ".att_nbr", H, 1, rng);
      g.edge = Var::parameter(glorot({1}, 1, 1, rng), ht + ".edge");
      rp.heads.push_back(std::move(g));
    }
    p.relations.push_back(std::move(rp));
  }
  if (config.share_gat_parameters) {
    // Shared attention plus a learned per-relation offset.
    RelationParams shared = p.relations.front();
    p.relations.clear();
    for (std::size_t r = 0; r < relation_count; ++r) {
      RelationParams rp = shared;
      rp.embedding = Var::parameter(glorot({H}, H, 1, rng), "gat.embedding" + std::to_string(r));
      p.relations.push_back(std::move(rp));
    }
  }
  p.rel_weight = weight("relation.weight", H, H, rng);
  p.rel_vector = weight("relation.vector", H, 1, rng);
  p.fuse_weight = weight("fusion.weight", 2 * H, H, rng);
  p.fuse_bias = zeros("fusion.bias", {H});
  p.reg_weight = weight("head.reg.weight", H, 1, rng);
  p.reg_bias = zeros("head.reg.bias", {1});
  p.cls_weight = weight("head.cls.weight", H, data::kNumClasses, rng);
  p.cls_bias = zeros("head.cls.bias", {static_cast<std::size_t>(data::kNumClasses)});
  p.a_plus = scalar_param("diffusion.a_plus", config.diffusion_init);
  p.a_minus = scalar_param("diffusion.a_minus", config.diffusion_init);
  return p;
}

std::vector<Var> ModelParameters::all() const {
  std::vector<Var> out{in_weight, in_bias};
  for (std::size_t h = 0; h < query.size(); ++h) {
    out.push_back(query[h]);
    out.push_back(key[h]);
    out.push_back(value[h]);
  }
  out.insert(out.end(), {out_weight, out_bias, alpha_raw, node_weight, node_bias});
  // Shared-mode relations alias one head set; list each tensor once.
  std::vector<const ad::Node*> seen;
  auto push_unique = [&](const Var& v) {
    if (std::find(seen.begin(), seen.end(), v.node().get()) != seen.end()) return;
    seen.push_back(v.node().get());
    out.push_back(v);
  };
  for (const auto& r : relations) {
    for (const auto& g : r.heads) {
      push_unique(g.weight);
      push_unique(g.att_self);
      push_unique(g.att_nbr);
      push_unique(g.edge);
    }
    if (r.embedding) push_unique(r.embedding);
  }
  out.insert(out.end(), {rel_weight, rel_vector, fuse_weight, fuse_bias, reg_weight, reg_bias, cls_weight, cls_bias,
                         a_plus, a_minus});
  return out;
}

double ModelParameters::alpha() const {
  const double x = alpha_raw.value()[0];
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

void ModelParameters::write_binary(std::ostream& out) const {
  for (const auto& p : all()) {
    const auto& v = p.value();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

void ModelParameters::read_binary(std::istream& in) {
  for (auto& p : all()) {
    Var v = p;
    auto& a = v.mutable_value();
    in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    if (!in) throw DataError("parameter file truncated at '" + p.name() + "'");
  }
}

nlohmann::json ModelParameters::manifest() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : all()) arr.push_back({{"name", p.name()}, {"shape", p.shape()}});
  return arr;
}

ModelParameters ModelParameters::clone() const {
  ModelParameters c = *this;
  // Re-create every leaf so the copy owns independent storage.
  std::vector<std::pair<const ad::Node*, Var>> remap;
  auto fresh = [&](Var& v) {
    if (!v) return;
    for (auto& [old, nv] : remap)
      if (old == v.node().get()) {
        v = nv;
        return;
      }
    Var nv = Var::parameter(v.value(), v.name());
    remap.emplace_back(v.node().get(), nv);
    v = nv;
  };
  fresh(c.in_weight);
  fresh(c.in_bias);
  for (auto& v : c.query) fresh(v);
  for (auto& v : c.key) fresh(v);
  for (auto& v : c.value) fresh(v);
  for (Var* v : {&c.out_weight, &c.out_bias, &c.alpha_raw, &c.node_weight, &c.node_bias}) fresh(*v);
  for (auto& r : c.relations) {
    for (auto& g : r.heads)
      for (Var* v : {&g.weight, &g.att_self, &g.att_nbr, &g.edge}) fresh(*v);
    fresh(r.embedding);
  }
  for (Var* v : {&c.rel_weight, &c.rel_vector, &c.fuse_weight, &c.fuse_bias, &c.reg_weight, &c.reg_bias, &c.cls_weight,
                 &c.cls_bias, &c.a_plus, &c.a_minus})
    fresh(*v);
  return c;
}

void ModelParameters::copy_values_from(const ModelParameters& other) {
  auto dst = all();
  auto src = other.all();
  if (dst.size() != src.size()) throw std::invalid_argument("copy_values_from: parameter layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) throw std::invalid_argument("copy_values_from: shape mismatch");
    dst[i].mutable_value() = src[i].value();
  }
}

Array positional_encoding(std::size_t weeks, std::size_t hidden) {
  Array pe({weeks, hidden});
  for (std::size_t t = 0; t < weeks; ++t)
    for (std::size_t i = 0; i < hidden; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(hidden));
      const double angle = static_cast<double>(t) * freq;
      pe.at(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

Var decay_bias(const Var& alpha, const std::vector<std::vector<resilience::Impulse>>& impulses, std::size_t weeks) {
  const double a = alpha.value()[0];
  const std::size_t n = impulses.size();
  Array out({n, 1, weeks}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& imp : impulses[i])
      for (std::size_t t = static_cast<std::size_t>(std::max(imp.week, 0)); t < weeks; ++t)
        out[i * weeks + t] += imp.severity * std::exp(-a * static_cast<double>(static_cast<long>(t) - imp.week));
  ad::NodePtr an = alpha.node();
  return ad::make_op(std::move(out), {alpha}, [an, impulses, weeks](ad::Node& self) {
    if (!an->requires_grad) return;
    const double a = an->value[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < impulses.size(); ++i)
      for (const auto& imp : impulses[i])
        for (std::size_t t = static_cast<std::size_t>(std::max(imp.week, 0)); t < weeks; ++t) {
          const double lag = static_cast<double>(static_cast<long>(t) - imp.week);
          acc -= self.grad[i * weeks + t] * lag * imp.severity * std::exp(-a * lag);
        }
    an->grad_buffer()[0] += acc;
  });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const Var& bias, double scale,
                         std::shared_ptr<const Array>* probs) {
  const auto& qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs || v.shape().size() != 3 || v.shape()[0] != qs[0] || v.shape()[1] != qs[1])
    throw std::invalid_argument("scaled_dot_attention: incompatible shapes " + ad::shape_str(qs) + ", " +
                                ad::shape_str(k.shape()) + ", " + ad::shape_str(v.shape()));
  const std::size_t B = qs[0], T = qs[1], d = qs[2], dv = v.shape()[2];
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.shape() != ad::Shape{B, 1, T})
    throw std::invalid_argument("scaled_dot_attention: bias shape " + ad::shape_str(bias.shape()) + ", expected " +
                                ad::shape_str({B, 1, T}));
  auto P = std::make_shared<Array>(ad::Shape{B, T, T});
  Array out({B, T, dv});
  Eigen::VectorXd row_stat(T);
  for (std::size_t b = 0; b < B; ++b) {
    MapMat S(P->data() + b * T * T, T, T);
    S.noalias() = CMapMat(q.value().data() + b * T * d, T, d) * CMapMat(k.value().data() + b * T * d, T, d).transpose();
    S *= scale;
    if (has_bias) S.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data() + b * T, T);
    row_stat = S.rowwise().maxCoeff();
    S.colwise() -= row_stat;
    S = S.array().exp();
    row_stat = S.rowwise().sum();
    S.array().colwise() /= row_stat.array();
    MapMat(out.data() + b * T * dv, T, dv).noalias() = S * CMapMat(v.value().data() + b * T * dv, T, dv);
  }
  if (probs) *probs = P;
  std::vector<Var> parents{q, k, v};
  if (has_bias) parents.push_back(bias);
  ad::NodePtr qn = q.node(), kn = k.node(), vn = v.node(), bn = has_bias ? bias.node() : nullptr;
  std::shared_ptr<const Array> Pc = P;
  return ad::make_op(std::move(out), parents, [qn, kn, vn, bn, Pc, B, T, d, dv, scale](ad::Node& self) {
    RowMat dP(T, T);
    Eigen::VectorXd dot(T);
    for (std::size_t b = 0; b < B; ++b) {
      CMapMat Pm(Pc->data() + b * T * T, T, T);
      CMapMat G(self.grad.data() + b * T * dv, T, dv);
      CMapMat Vm(vn->value.data() + b * T * dv, T, dv);
      if (vn->requires_grad) MapMat(vn->grad_buffer().data() + b * T * dv, T, dv).noalias() += Pm.transpose() * G;
      dP.noalias() = G * Vm.transpose();
      dot = (dP.array() * Pm.array()).rowwise().sum();
      dP.array() = Pm.array() * (dP.array().colwise() - dot.array());
      // dP now holds d(loss)/d(logits).
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::RowVectorXd>(bn->grad_buffer().data() + b * T, T) += dP.colwise().sum();
      }
      if (qn->requires_grad)
        MapMat(qn->grad_buffer().data() + b * T * d, T, d).noalias() +=
            scale * dP * CMapMat(kn->value.data() + b * T * d, T, d);
      if (kn->requires_grad)
        MapMat(kn->grad_buffer().data() + b * T * d, T, d).noalias() +=
            scale * dP.transpose() * CMapMat(qn->value.data() + b * T * d, T, d);
    }
  });
}

Var pooled_attention(const Var& q, const Var& k, const Var& v, const Var& bias, double scale,
                     std::shared_ptr<const Array>* probs) {
  const auto& qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs || v.shape().size() != 3 || v.shape()[0] != qs[0] || v.shape()[1] != qs[1])
    throw std::invalid_argument("pooled_attention: incompatible shapes " + ad::shape_str(qs) + ", " +
                                ad::shape_str(k.shape()) + ", " + ad::shape_str(v.shape()));
  const std::size_t B = qs[0], T = qs[1], d = qs[2], dv = v.shape()[2];
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.shape() != ad::Shape{B, 1, T})
    throw std::invalid_argument("pooled_attention: bias shape " + ad::shape_str(bias.shape()) + ", expected " +
                                ad::shape_str({B, 1, T}));
  auto P = std::make_shared<Array>(ad::Shape{B, T, T});
  Array out({B, dv});
  Eigen::VectorXd row_stat(T);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t b = 0; b < B; ++b) {
    MapMat S(P->data() + b * T * T, T, T);
    S.noalias() = CMapMat(q.value().data() + b * T * d, T, d) * CMapMat(k.value().data() + b * T * d, T, d).transpose();
    S *= scale;
    if (has_bias) S.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data() + b * T, T);
    row_stat = S.rowwise().maxCoeff();
    S.colwise() -= row_stat;
    S = S.array().exp();
    row_stat = S.rowwise().sum();
    S.array().colwise() /= row_stat.array();
    Eigen::RowVectorXd pbar = S.colwise().sum() * inv_t;
    MapMat(out.data() + b * dv, 1, dv).noalias() = pbar * CMapMat(v.value().data() + b * T * dv, T, dv);
  }
  if (probs) *probs = P;
  std::vector<Var> parents{q, k, v};
  if (has_bias) parents.push_back(bias);
  ad::NodePtr qn = q.node(), kn = k.node(), vn = v.node(), bn = has_bias ? bias.node() : nullptr;
  std::shared_ptr<const Array> Pc = P;
  return ad::make_op(std::move(out), parents, [qn, kn, vn, bn, Pc, B, T, d, dv, scale, inv_t](ad::Node& self) {
    RowMat dS(T, T);
    Eigen::VectorXd g(T), pg(T);
    for (std::size_t b = 0; b < B; ++b) {
      CMapMat Pm(Pc->data() + b * T * T, T, T);
      CMapMat G(self.grad.data() + b * dv, 1, dv);
      CMapMat Vm(vn->value.data() + b * T * dv, T, dv);
      if (vn->requires_grad) {
        Eigen::RowVectorXd pbar = Pm.colwise().sum() * inv_t;
        MapMat(vn->grad_buffer().data() + b * T * dv, T, dv).noalias() += pbar.transpose() * G;
      }
      // Every query row receives the same upstream gradient g.
      g.noalias() = Vm * G.transpose() * inv_t;
      pg.noalias() = Pm * g;
      dS.array() = Pm.array().rowwise() * g.transpose().array();
      dS.array() -= Pm.array().colwise() * pg.array();
      if (bn && bn->requires_grad)
        Eigen::Map<Eigen::RowVectorXd>(bn->grad_buffer().data() + b * T, T) += dS.colwise().sum();
      if (qn->requires_grad)
        MapMat(qn->grad_buffer().data() + b * T * d, T, d).noalias() +=
            scale * dS * CMapMat(kn->value.data() + b * T * d, T, d);
      if (kn->requires_grad)
        MapMat(kn->grad_buffer().data() + b * T * d, T, d).noalias() +=
            scale * dS.transpose() * CMapMat(qn->value.data() + b * T * d, T, d);
    }
  });
}

namespace {

// Projection, multi-head attention and mean pooling fused per node.
// The input has only six channels. With A = W_in W and C = (PE + b_in) W we get
// Q = X A_q + C_q and K = X A_k + C_k, so the scaled logits split into
// [X, C_q A_k^T] [A_q A_k^T X^T + A_q C_k^T; X^T] + C_q C_k^T, where everything
// but X is shared by all nodes. The pooled context pbar V collapses the same way.
// Backward only needs X^T dS, dS X and running sums over nodes. Attention maps
// are recomputed during backward, so memory is independent of N * T * T.
class TemporalKernel {
 public:
  using Cols = Eigen::Block<const RowMat, Eigen::Dynamic, Eigen::Dynamic, false>;
  Cols aq(std::size_t h) const { return a_.middleCols(h * dh_, dh_); }
  Cols ak(std::size_t h) const { return a_.middleCols(H_ + h * dh_, dh_); }
  Cols av(std::size_t h) const { return a_.middleCols(2 * H_ + h * dh_, dh_); }
  Cols cq(std::size_t h) const { return c_.middleCols(h * dh_, dh_); }
  Cols ck(std::size_t h) const { return c_.middleCols(H_ + h * dh_, dh_); }
  Cols cv(std::size_t h) const { return c_.middleCols(2 * H_ + h * dh_, dh_); }
  TemporalKernel(const Array& x, const ModelParameters& params, std::size_t hidden, const Array* bias)
      : x_(x), bias_(bias), N_(x.dim(0)), T_(x.dim(1)), H_(hidden), heads_(params.query.size()),
        dh_(hidden / heads_), scale_(1.0 / std::sqrt(static_cast<double>(hidden / heads_))),
        w_in_(CMapMat(params.in_weight.value().data(), kTemporalChannels, H_)), w_qkv_(H_, 3 * H_) {
    for (std::size_t h = 0; h < heads_; ++h) {
      w_qkv_.middleCols(h * dh_, dh_) = CMapMat(params.query[h].value().data(), H_, dh_);
      w_qkv_.middleCols(H_ + h * dh_, dh_) = CMapMat(params.key[h].value().data(), H_, dh_);
      w_qkv_.middleCols(2 * H_ + h * dh_, dh_) = CMapMat(params.value[h].value().data(), H_, dh_);
    }
    const Array pe = positional_encoding(T_, H_);
    offset_ = CMapMat(pe.data(), T_, H_);
    offset_.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params.in_bias.value().data(), H_);
    a_.noalias() = w_in_ * w_qkv_;
    c_.noalias() = offset_ * w_qkv_;
    for (std::size_t h = 0; h < heads_; ++h) {
      Head hd;
      hd.m.noalias() = scale_ * aq(h) * ak(h).transpose();
      hd.b1.noalias() = scale_ * aq(h) * ck(h).transpose();
      hd.b2t.noalias() = scale_ * cq(h) * ak(h).transpose();
      hd.s0.noalias() = scale_ * cq(h) * ck(h).transpose();
      head_.push_back(std::move(hd));
    }
  }

  /// Pooled per-head contexts [N, H]; probs receives [N, T, T] per head.
  Array forward(std::vector<std::shared_ptr<Array>>* probs) {
    Array out({N_, H_});
    if (probs) {
      probs->clear();
      for (std::size_t h = 0; h < heads_; ++h) probs->push_back(std::make_shared<Array>(ad::Shape{N_, T_, T_}));
    }
    Eigen::RowVectorXd px(kTemporalChannels);
    for (std::size_t n = 0; n < N_; ++n)
      for (std::size_t h = 0; h < heads_; ++h) {
        softmax(n, h);
        px.noalias() = pbar_ * x_block(n);
        MapMat(out.data() + n * H_ + h * dh_, 1, dh_).noalias() = px * av(h) + pbar_ * cv(h);
        if (probs) MapMat((*probs)[h]->data() + n * T_ * T_, T_, T_) = P_;
      }
    return out;
  }

  struct Grads {
    RowMat w_in, w_qkv;
    Eigen::RowVectorXd b_in;
    Array bias;
  };

  Grads backward(const Array& grad_out, bool want_bias) {
    Array bias_grad = want_bias ? Array({N_, 1, T_}, 0.0) : Array();
    // Gradients with respect to a_ = W_in W_qkv and c_ = offset W_qkv.
    RowMat da = RowMat::Zero(kTemporalChannels, 3 * H_), dc = RowMat::Zero(T_, 3 * H_);
    const std::size_t C = kTemporalChannels;
    std::vector<RowMat> sum_p(heads_, RowMat::Zero(C, T_)), sum_r(heads_, RowMat::Zero(T_, C)),
        sum_px(heads_, RowMat::Zero(C, C)), sum_rx(heads_, RowMat::Zero(C, C)),
        sum_ds(heads_, RowMat::Zero(T_, T_));
    RowMat dS(T_, T_), p(C, T_), r(T_, C);
    Eigen::VectorXd gv(T_), pg(T_);
    Eigen::RowVectorXd px(C);
    for (std::size_t n = 0; n < N_; ++n) {
      const CMapMat X = x_block(n);
      for (std::size_t h = 0; h < heads_; ++h) {
        softmax(n, h);
        CMapMat G(grad_out.data() + n * H_ + h * dh_, 1, dh_);
        px.noalias() = pbar_ * X;
        da.middleCols(2 * H_ + h * dh_, dh_).noalias() += px.transpose() * G;
        dc.middleCols(2 * H_ + h * dh_, dh_).noalias() += pbar_.transpose() * G;
        // Every query row receives the same upstream gradient.
        gv.noalias() = X * (av(h) * G.transpose());
        gv.noalias() += cv(h) * G.transpose();
        gv /= static_cast<double>(T_);
        // dS_ij = P_ij (gv_j - sum_k P_ik gv_k)
        pg.noalias() = P_ * gv;
        dS.array() = P_.array().rowwise() * gv.transpose().array();
        dS.array() -= P_.array().colwise() * pg.array();
        if (want_bias) Eigen::Map<Eigen::RowVectorXd>(bias_grad.data() + n * T_, T_) += dS.colwise().sum();
        p.noalias() = X.transpose() * dS;
        r.noalias() = dS * X;
        sum_p[h] += p;
        sum_r[h] += r;
        sum_px[h].noalias() += p * X;
        sum_rx[h].noalias() += r.transpose() * X;
        sum_ds[h] += dS;
      }
    }
    for (std::size_t h = 0; h < heads_; ++h) {
      auto daq = da.middleCols(h * dh_, dh_);
      auto dak = da.middleCols(H_ + h * dh_, dh_);
      auto dcq = dc.middleCols(h * dh_, dh_);
      auto dck = dc.middleCols(H_ + h * dh_, dh_);
      daq.noalias() = scale_ * (sum_px[h] * ak(h) + sum_p[h] * ck(h));
      dak.noalias() = scale_ * (sum_rx[h] * aq(h) + sum_r[h].transpose() * cq(h));
      dcq.noalias() = scale_ * (sum_r[h] * ak(h) + sum_ds[h] * ck(h));
      dck.noalias() = scale_ * (sum_p[h].transpose() * aq(h) + sum_ds[h].transpose() * cq(h));
    }
    Grads g;
    g.w_in.noalias() = da * w_qkv_.transpose();
    g.w_qkv.noalias() = w_in_.transpose() * da;
    g.w_qkv.noalias() += offset_.transpose() * dc;
    g.b_in.noalias() = (dc * w_qkv_.transpose()).colwise().sum();
    g.bias = std::move(bias_grad);
    return g;
  }

 private:
  struct Head {
    RowMat m, b1, b2t, s0;  // [6, 6], [6, T], [T, 6], [T, T], all scaled
  };

  CMapMat x_block(std::size_t node) const {
    return CMapMat(x_.data() + node * T_ * kTemporalChannels, T_, kTemporalChannels);
  }

  // Row-normalized attention of one node and head in P_, column mean in pbar_.
  void softmax(std::size_t node, std::size_t h) {
    const std::size_t C = kTemporalChannels;
    const Head& hd = head_[h];
    const CMapMat X = x_block(node);
    lhs_.resize(T_, 2 * C);
    rhs_.resize(2 * C, T_);
    lhs_.leftCols(C) = X;
    lhs_.rightCols(C) = hd.b2t;
    rhs_.topRows(C) = hd.b1;
    rhs_.topRows(C).noalias() += hd.m * X.transpose();
    rhs_.bottomRows(C) = X.transpose();
    P_.resize(T_, T_);
    P_.noalias() = lhs_ * rhs_;
    P_ += hd.s0;
    if (bias_) P_.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_->data() + node * T_, T_);
    for (std::size_t i = 0; i < T_; ++i) {
      auto row = P_.row(i);
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    pbar_.noalias() = P_.colwise().sum() / static_cast<double>(T_);
  }

  const Array& x_;
  const Array* bias_;
  std::size_t N_, T_, H_, heads_, dh_;
  double scale_;
  RowMat w_in_, w_qkv_;
  RowMat offset_;  // positional encoding plus input bias, [T, H]
  RowMat a_, c_;   // [6, 3H] and [T, 3H]
  std::vector<Head> head_;
  RowMat lhs_, rhs_, P_;
  Eigen::RowVectorXd pbar_;
};

}  // namespace

Var temporal_encode(const ModelInputs& inputs, const ModelParameters& params, const ModelConfig& config,
                    TemporalTrace* trace) {
  const std::size_t N = inputs.n_nodes, T = inputs.weeks, H = config.hidden_dim;
  if (inputs.temporal.shape() != ad::Shape{N, T, kTemporalChannels})
    throw std::invalid_argument("temporal_encode: temporal input has shape " + ad::shape_str(inputs.temporal.shape()));
  if (params.in_weight.shape() != ad::Shape{kTemporalChannels, H} || params.query.empty() ||
      H % params.query.size() != 0)
    throw std::invalid_argument("temporal_encode: parameters do not match hidden_dim " + std::to_string(H));
  for (double x : inputs.temporal.values())
    if (!std::isfinite(x)) throw NumericError("temporal_encode: non-finite input");

  Var bias;
  if (config.use_disaster_bias) {
    if (inputs.impulses.size() != N) throw std::invalid_argument("temporal_encode: impulses per node missing");
    bias = decay_bias(ad::softplus(params.alpha_raw), inputs.impulses, T);
  }
  if (trace) {
    trace->decay = bias;
    trace->attention.clear();
  }

  auto x = std::make_shared<const Array>(inputs.temporal);
  std::vector<std::shared_ptr<Array>> probs;
  Array pooled_value = TemporalKernel(*x, params, H, bias ? &bias.value() : nullptr)
                           .forward(trace && trace->keep_attention ? &probs : nullptr);
  if (trace)
    for (auto& p : probs) trace->attention.push_back(p);

  std::vector<Var> parents{params.in_weight, params.in_bias};
  for (const auto* group : {&params.query, &params.key, &params.value})
    parents.insert(parents.end(), group->begin(), group->end());
  if (bias) parents.push_back(bias);
  ModelParameters p;
  p.in_weight = params.in_weight;
  p.in_bias = params.in_bias;
  p.query = params.query;
  p.key = params.key;
  p.value = params.value;
  ad::NodePtr bias_node = bias ? bias.node() : nullptr;
  Var pooled = ad::make_op(std::move(pooled_value), parents, [x, p, bias_node, H](ad::Node& self) {
    const bool want_bias = bias_node && bias_node->requires_grad;
    TemporalKernel kernel(*x, p, H, bias_node ? &bias_node->value : nullptr);
    auto g = kernel.backward(self.grad, want_bias);
    const std::size_t heads = p.query.size(), dh = H / heads;
    auto add_to = [](const Var& v, auto&& block) {
      if (!v.requires_grad()) return;
      MapMat(v.node()->grad_buffer().data(), block.rows(), block.cols()) += block;
    };
    add_to(p.in_weight, g.w_in);
    add_to(p.in_bias, g.b_in);
    for (std::size_t h = 0; h < heads; ++h) {
      add_to(p.query[h], g.w_qkv.middleCols(h * dh, dh));
      add_to(p.key[h], g.w_qkv.middleCols(H + h * dh, dh));
      add_to(p.value[h], g.w_qkv.middleCols(2 * H + h * dh, dh));
    }
    if (want_bias) {
      auto& b = bias_node->grad_buffer();
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += g.bias[i];
    }
  });
  // Mean pooling commutes with the affine output projection.
  return add(ad::matmul(pooled, params.out_weight), params.out_bias);
}

Var gat_relation(const Var& h, const RelationTensors& rel, const RelationParams& params, const ModelConfig& config,
                 std::vector<Var>* attention) {
  const std::size_t N = h.shape()[0];
  Var feat = Var::constant(rel.edge_feature);
  Var acc;
  for (const auto& head : params.heads) {
    Var wh = ad::matmul(h, head.weight);
    if (params.embedding) wh = add(wh, params.embedding);
    Var s_self = ad::matmul(wh, head.att_self);
    Var s_nbr = ad::matmul(wh, head.att_nbr);
    Var logit = add(add(ad::gather_rows(s_self, rel.target), ad::gather_rows(s_nbr, rel.source)), mul(feat, head.edge));
    Var att = ad::segment_softmax(ad::leaky_relu(logit, config.leaky_slope), rel.target, N);
    if (attention) attention->push_back(att);
    Var out = ad::edge_aggregate(att, wh, rel.source, rel.target, N);
    acc = acc ? add(acc, out) : out;
  }
  return params.heads.size() == 1 ? acc : ad::scale(acc, 1.0 / static_cast<double>(params.heads.size()));
}

Var relation_aggregate(const std::vector<Var>& per_relation, const std::vector<const RelationTensors*>& rels,
                       const ModelParameters& params, Var* weights) {
  if (per_relation.empty() || per_relation.size() != rels.size())
    throw std::invalid_argument("relation_aggregate: need one embedding per relation");
  const std::size_t N = per_relation.front().shape()[0], R = per_relation.size();
  std::vector<Var> scores;
  for (const auto& hr : per_relation)
    scores.push_back(ad::matmul(ad::tanh(ad::matmul(hr, params.rel_weight)), params.rel_vector));
  Var s = ad::concat(scores);
  std::vector<unsigned char> mask(N * R, 0);
  bool any_mask = false;
  for (std::size_t r = 1; r < R; ++r)
    for (std::size_t i = 0; i < N; ++i)
      if (!rels[r]->incident[i]) mask[i * R + r] = 1, any_mask = true;
  if (any_mask) s = ad::masked_fill(s, mask, -std::numeric_limits<double>::infinity());
  Var w = ad::row_softmax(s);
  if (weights) *weights = w;
  Var out;
  for (std::size_t r = 0; r < R; ++r) {
    Var term = mul(per_relation[r], ad::slice_cols(w, r, 1));
    out = out ? add(out, term) : term;
  }
  return out;
}

std::vector<data::ChangeClass> ForwardResult::classes() const {
  const Array& l = logits.value();
  const std::size_t n = l.dim(0);
  std::vector<data::ChangeClass> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < data::kNumClasses; ++c)
      if (l.at(i, static_cast<std::size_t>(c)) > l.at(i, static_cast<std::size_t>(best))) best = c;
    out[i] = static_cast<data::ChangeClass>(best);
  }
  return out;
}

ForwardResult forward(const ModelInputs& inputs, const GraphTensors& graph, const ModelParameters& params,
                      const ModelConfig& config, bool keep_attention) {
  const std::size_t N = inputs.n_nodes;
  if (graph.n_nodes != N)
    throw std::invalid_argument("forward: graph has " + std::to_string(graph.n_nodes) + " nodes, inputs have " +
                                std::to_string(N));
  if (inputs.attributes.rank() != 2 || inputs.attributes.dim(0) != N)
    throw std::invalid_argument("forward: attribute matrix shape " + ad::shape_str(inputs.attributes.shape()));
  if (params.relations.size() != graph.relations.size())
    throw std::invalid_argument("forward: parameters cover " + std::to_string(params.relations.size()) +
                                " relations, graph has " + std::to_string(graph.relations.size()));
  ForwardResult res;
  res.temporal.keep_attention = keep_attention;
  res.h_temp = temporal_encode(inputs, params, config, &res.temporal);
  Var node = ad::relu(add(ad::matmul(ad::concat({Var::constant(inputs.attributes), res.h_temp}), params.node_weight),
                          params.node_bias));

  const std::size_t used = config.use_multi_relation ? graph.relations.size() : 1;
  std::vector<Var> per_relation;
  std::vector<const RelationTensors*> rels;
  for (std::size_t r = 0; r < used; ++r) {
    res.gat_attention.emplace_back();
    per_relation.push_back(gat_relation(node, graph.relations[r], params.relations[r], config, &res.gat_attention.back()));
    rels.push_back(&graph.relations[r]);
  }
  res.h_spatial = relation_aggregate(per_relation, rels, params, &res.relation_weights);

  Var fused = ad::relu(add(ad::matmul(ad::concat({res.h_temp, res.h_spatial}), params.fuse_weight), params.fuse_bias));
  res.delta_y = ad::tanh(add(ad::matmul(fused, params.reg_weight), params.reg_bias));
  res.logits = add(ad::matmul(fused, params.cls_weight), params.cls_bias);
  return res;
}

Var diffusion_loss(const Var& delta_y, const GraphTensors& graph, const Var& a_plus, const Var& a_minus,
                   double lambda) {
  const std::size_t N = delta_y.shape()[0];
  Var neighbor = ad::edge_aggregate(Var::constant(graph.lap_weight), delta_y, graph.lap_source, graph.lap_target, N);
  Var lap = sub(mul(delta_y, Var::constant(graph.lap_degree)), neighbor);
  std::vector<double> pos(N, 0.0), neg(N, 0.0);
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double d = delta_y.value()[i];
    n_pos += d > 0.0;
    n_neg += d < 0.0;
  }
  for (std::size_t i = 0; i < N; ++i) {
    const double d = delta_y.value()[i];
    if (d > 0.0) pos[i] = 1.0 / static_cast<double>(n_pos);
    if (d < 0.0) neg[i] = 1.0 / static_cast<double>(n_neg);
  }
  Var res_pos = sub(delta_y, mul(lap, a_plus));
  Var res_neg = sub(delta_y, mul(lap, a_minus));
  Var total = add(ad::sum(mul(ad::square(res_pos), Var::constant(column(pos)))),
                  ad::sum(mul(ad::square(res_neg), Var::constant(column(neg)))));
  return ad::scale(total, lambda);
}

LossTerms total_loss(const ForwardResult& fwd, const Targets& targets, const GraphTensors& graph,
                     const ModelParameters& params, const ModelConfig& config) {
  const std::size_t N = fwd.delta_y.shape()[0];
  if (targets.labels.size() != N || targets.delta.size() != N || targets.weight.size() != N)
    throw std::invalid_argument("total_loss: " + std::to_string(targets.labels.size()) + " labels for " +
                                std::to_string(N) + " predictions");
  double wsum = 0.0;
  for (double w : targets.weight) wsum += w;
  if (!(wsum > 0.0)) throw std::invalid_argument("total_loss: empty training set");

  Array onehot({N, static_cast<std::size_t>(data::kNumClasses)}, 0.0);
  for (std::size_t i = 0; i < N; ++i) onehot.at(i, static_cast<std::size_t>(targets.labels[i])) = targets.weight[i];
  Var cls = ad::scale(ad::sum(mul(ad::log_softmax(fwd.logits), Var::constant(std::move(onehot)))), -1.0 / wsum);

  Var reg = ad::scale(ad::sum(mul(ad::square(sub(fwd.delta_y, Var::constant(column(targets.delta)))),
                                  Var::constant(column(targets.weight)))),
                      1.0 / wsum);

  LossTerms out;
  out.cls = cls.value()[0];
  out.reg = reg.value()[0];
  out.total = add(ad::scale(cls, config.lambda_cls), ad::scale(reg, config.lambda_reg));
  if (config.use_diffusion_loss) {
    Var diff = diffusion_loss(fwd.delta_y, graph, params.a_plus, params.a_minus, config.lambda_diff);
    out.diff = diff.value()[0];
    out.total = add(out.total, diff);
  }
  return out;
}

}  // namespace sta4clc::model
