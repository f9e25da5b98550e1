#include "sta4clc/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace sta4clc::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw std::invalid_argument(os.str());
}

bool needs_grad(const NodePtr& n) { return n && n->requires_grad; }

// Right-aligned broadcast of b into a's shape; returns per-axis strides of b
// for a padded rank-3 view of a.
struct Broadcast {
  std::size_t d0, d1, d2;
  std::size_t s0, s1, s2;
};

Broadcast broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || a.size() > 3) shape_error(op, a, b);
  std::size_t ad[3] = {1, 1, 1};
  std::size_t bd[3] = {1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) ad[3 - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) bd[3 - b.size() + i] = b[i];
  for (int i = 0; i < 3; ++i)
    if (bd[i] != 1 && bd[i] != ad[i]) shape_error(op, a, b);
  Broadcast p{ad[0], ad[1], ad[2], 0, 0, 0};
  p.s2 = bd[2] == 1 ? 0 : 1;
  p.s1 = bd[1] == 1 ? 0 : bd[2];
  p.s0 = bd[0] == 1 ? 0 : bd[1] * bd[2];
  return p;
}

template <typename F>
void for_broadcast(const Broadcast& p, F&& f) {
  std::size_t ia = 0;
  for (std::size_t i = 0; i < p.d0; ++i)
    for (std::size_t j = 0; j < p.d1; ++j)
      for (std::size_t k = 0; k < p.d2; ++k, ++ia) f(ia, i * p.s0 + j * p.s1 + k * p.s2);
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Array out(x.shape());
  const Array& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, deriv](Node& self) {
    if (!needs_grad(xn)) return;
    Array& gx = xn->grad_buffer();
    const Array& xv = xn->value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
  if (shape_.empty() || shape_.size() > 3)
    throw std::invalid_argument("Array: rank must be 1..3, got " + shape_str(shape_));
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_.empty() || shape_.size() > 3)
    throw std::invalid_argument("Array: rank must be 1..3, got " + shape_str(shape_));
  if (data_.size() != numel(shape_))
    throw std::invalid_argument("Array: " + std::to_string(data_.size()) + " values for shape " +
                                shape_str(shape_));
}

Array Array::reshaped(Shape shape) const {
  if (numel(shape) != size()) shape_error("reshape", shape_, shape);
  Array out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Array& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Array(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Array value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

void Var::zero_grad() {
  if (node_) node_->grad = Array();
}

Var make_op(Array value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (auto& p : parents) {
    any = any || p.requires_grad();
    n->parents.push_back(p.node());
  }
  n->requires_grad = any;
  if (any) n->backward_fn = std::move(backward_fn);
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative DFS post-order gives a deterministic topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate gradients are reset so repeated backward calls on fresh
  // graphs never see stale buffers; leaf parameter gradients accumulate.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Array();
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

Var matmul(const Var& x, const Var& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xs.back() != ws[0]) shape_error("matmul", xs, ws);
  const std::size_t k = ws[0], n = ws[1], m = x.value().size() / k;
  Shape out_shape = xs;
  out_shape.back() = n;
  Array out(out_shape);
  MapMat(out.data(), m, n).noalias() = CMapMat(x.value().data(), m, k) * CMapMat(w.value().data(), k, n);
  NodePtr xn = x.node(), wn = w.node();
  return make_op(std::move(out), {x, w}, [xn, wn, m, k, n](Node& self) {
    CMapMat g(self.grad.data(), m, n);
    if (needs_grad(xn))
      MapMat(xn->grad_buffer().data(), m, k).noalias() += g * CMapMat(wn->value.data(), k, n).transpose();
    if (needs_grad(wn))
      MapMat(wn->grad_buffer().data(), k, n).noalias() += CMapMat(xn->value.data(), m, k).transpose() * g;
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) shape_error("bmm", as, bs);
  const std::size_t batch = as[0], m = as[1], k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  if ((transpose_b ? bs[2] : bs[1]) != k) shape_error("bmm", as, bs);
  Array out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    CMapMat A(a.value().data() + i * m * k, m, k);
    MapMat C(out.data() + i * m * n, m, n);
    if (transpose_b)
      C.noalias() = A * CMapMat(b.value().data() + i * n * k, n, k).transpose();
    else
      C.noalias() = A * CMapMat(b.value().data() + i * k * n, k, n);
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn, batch, m, k, n, transpose_b](Node& self) {
    double* ga = needs_grad(an) ? an->grad_buffer().data() : nullptr;
    double* gb = needs_grad(bn) ? bn->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      CMapMat G(self.grad.data() + i * m * n, m, n);
      CMapMat A(an->value.data() + i * m * k, m, k);
      if (transpose_b) {
        CMapMat B(bn->value.data() + i * n * k, n, k);
        if (ga) MapMat(ga + i * m * k, m, k).noalias() += G * B;
        if (gb) MapMat(gb + i * n * k, n, k).noalias() += G.transpose() * A;
      } else {
        CMapMat B(bn->value.data() + i * k * n, k, n);
        if (ga) MapMat(ga + i * m * k, m, k).noalias() += G * B.transpose();
        if (gb) MapMat(gb + i * k * n, k, n).noalias() += A.transpose() * G;
      }
    }
  });
}

namespace {

Var broadcast_binary(const char* op, const Var& a, const Var& b, int kind) {
  // kind: 0 add, 1 sub, 2 mul
  const Broadcast plan = broadcast_plan(op, a.shape(), b.shape());
  Array out(a.shape());
  const Array& av = a.value();
  const Array& bv = b.value();
  if (kind == 0)
    for_broadcast(plan, [&](std::size_t i, std::size_t j) { out[i] = av[i] + bv[j]; });
  else if (kind == 1)
    for_broadcast(plan, [&](std::size_t i, std::size_t j) { out[i] = av[i] - bv[j]; });
  else
    for_broadcast(plan, [&](std::size_t i, std::size_t j) { out[i] = av[i] * bv[j]; });
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn, plan, kind](Node& self) {
    const Array& g = self.grad;
    if (needs_grad(an)) {
      Array& ga = an->grad_buffer();
      if (kind == 2) {
        const Array& bv = bn->value;
        for_broadcast(plan, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * bv[j]; });
      } else {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
    }
    if (needs_grad(bn)) {
      Array& gb = bn->grad_buffer();
      if (kind == 0)
        for_broadcast(plan, [&](std::size_t i, std::size_t j) { gb[j] += g[i]; });
      else if (kind == 1)
        for_broadcast(plan, [&](std::size_t i, std::size_t j) { gb[j] -= g[i]; });
      else {
        const Array& av = an->value;
        for_broadcast(plan, [&](std::size_t i, std::size_t j) { gb[j] += g[i] * av[i]; });
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return broadcast_binary("add", a, b, 0); }
Var sub(const Var& a, const Var& b) { return broadcast_binary("sub", a, b, 1); }
Var mul(const Var& a, const Var& b) { return broadcast_binary("mul", a, b, 2); }

Var scale(const Var& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t rows = parts.front().value().size() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || p.value().size() / s.back() != rows ||
        !std::equal(s.begin(), s.end() - 1, first.begin()))
      shape_error("concat", first, s);
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Array out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * widths[p], widths[p], out.data() + r * total + offset);
    offset += widths[p];
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op(std::move(out), parts, [nodes, widths, rows, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (needs_grad(nodes[p])) {
        double* g = nodes[p]->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[p]; ++c) g[r * widths[p] + c] += self.grad[r * total + offset + c];
      }
      offset += widths[p];
    }
  });
}

Var row_softmax(const Var& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.value().size() / width;
  Array out(x.shape());
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < width; ++c) o[c] /= z;
  }
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, rows, width](Node& self) {
    if (!needs_grad(xn)) return;
    double* gx = xn->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * width;
      const double* g = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t c = 0; c < width; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < width; ++c) gx[r * width + c] += y[c] * (g[c] - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.value().size() / width;
  Array out(x.shape());
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv + r * width;
    const double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = in[c] - lse;
  }
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, rows, width](Node& self) {
    if (!needs_grad(xn)) return;
    double* gx = xn->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * width;
      const double* g = self.grad.data() + r * width;
      double gs = 0.0;
      for (std::size_t c = 0; c < width; ++c) gs += g[c];
      for (std::size_t c = 0; c < width; ++c) gx[r * width + c] += g[c] - std::exp(y[c]) * gs;
    }
  });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  NodePtr xn = x.node();
  return make_op(Array::scalar(s), {x}, [xn](Node& self) {
    if (!needs_grad(xn)) return;
    Array& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_axis1(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) shape_error("mean_axis1", s, {});
  const std::size_t b = s[0], t = s[1], d = s[2];
  Array out({b, d});
  const double inv = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const double* row = x.value().data() + (i * t + j) * d;
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += row[k];
    }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, b, t, d, inv](Node& self) {
    if (!needs_grad(xn)) return;
    double* g = xn->grad_buffer().data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t k = 0; k < d; ++k) g[(i * t + j) * d + k] += self.grad[i * d + k] * inv;
  });
}

Var masked_fill(const Var& x, std::span<const unsigned char> mask, double fill_value) {
  if (mask.size() != x.value().size())
    throw std::invalid_argument("masked_fill: mask has " + std::to_string(mask.size()) + " entries for shape " +
                                shape_str(x.shape()));
  Array out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = fill_value;
  NodePtr xn = x.node();
  std::vector<unsigned char> m(mask.begin(), mask.end());
  return make_op(std::move(out), {x}, [xn, m = std::move(m)](Node& self) {
    if (!needs_grad(xn)) return;
    Array& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!m[i]) g[i] += self.grad[i];
  });
}

Var transpose(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 2) shape_error("transpose", s, {});
  const std::size_t r = s[0], c = s[1];
  Array out({c, r});
  MapMat(out.data(), c, r) = CMapMat(x.value().data(), r, c).transpose();
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, r, c](Node& self) {
    if (!needs_grad(xn)) return;
    MapMat(xn->grad_buffer().data(), r, c) += CMapMat(self.grad.data(), c, r).transpose();
  });
}

Var reshape(const Var& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn](Node& self) {
    if (!needs_grad(xn)) return;
    Array& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 2 || start + count > s[1]) shape_error("slice_cols", s, {start, count});
  const std::size_t rows = s[0], width = s[1];
  Array out({rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().data() + r * width + start, count, out.data() + r * count);
  NodePtr xn = x.node();
  return make_op(std::move(out), {x}, [xn, rows, width, start, count](Node& self) {
    if (!needs_grad(xn)) return;
    double* g = xn->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) g[r * width + start + c] += self.grad[r * count + c];
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Shape& s = x.shape();
  if (s.size() != 2) shape_error("gather_rows", s, {index.size()});
  const std::size_t width = s[1];
  Array out({index.size(), width});
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= s[0]) throw std::out_of_range("gather_rows: index " + std::to_string(index[e]) + " out of range");
    std::copy_n(x.value().data() + index[e] * width, width, out.data() + e * width);
  }
  NodePtr xn = x.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op(std::move(out), {x}, [xn, idx = std::move(idx), width](Node& self) {
    if (!needs_grad(xn)) return;
    double* g = xn->grad_buffer().data();
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t c = 0; c < width; ++c) g[idx[e] * width + c] += self.grad[e * width + c];
  });
}

Var segment_softmax(const Var& logits, std::span<const std::size_t> segment, std::size_t n_segments) {
  const Array& lv = logits.value();
  if (lv.size() != segment.size()) shape_error("segment_softmax", logits.shape(), {segment.size()});
  std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < segment.size(); ++e) mx[segment[e]] = std::max(mx[segment[e]], lv[e]);
  std::vector<double> z(n_segments, 0.0);
  Array out(logits.shape());
  for (std::size_t e = 0; e < segment.size(); ++e) z[segment[e]] += (out[e] = std::exp(lv[e] - mx[segment[e]]));
  for (std::size_t e = 0; e < segment.size(); ++e) out[e] /= z[segment[e]];
  NodePtr ln = logits.node();
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_op(std::move(out), {logits}, [ln, seg = std::move(seg), n_segments](Node& self) {
    if (!needs_grad(ln)) return;
    std::vector<double> dot(n_segments, 0.0);
    for (std::size_t e = 0; e < seg.size(); ++e) dot[seg[e]] += self.grad[e] * self.value[e];
    Array& g = ln->grad_buffer();
    for (std::size_t e = 0; e < seg.size(); ++e) g[e] += self.value[e] * (self.grad[e] - dot[seg[e]]);
  });
}

Var edge_aggregate(const Var& weight, const Var& x, std::span<const std::size_t> source,
                   std::span<const std::size_t> target, std::size_t n_out) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || weight.value().size() != source.size() || source.size() != target.size())
    shape_error("edge_aggregate", weight.shape(), xs);
  const std::size_t width = xs[1];
  Array out({n_out, width});
  const Array& w = weight.value();
  const double* xv = x.value().data();
  for (std::size_t e = 0; e < source.size(); ++e) {
    const double* src = xv + source[e] * width;
    double* dst = out.data() + target[e] * width;
    for (std::size_t c = 0; c < width; ++c) dst[c] += w[e] * src[c];
  }
  NodePtr wn = weight.node(), xn = x.node();
  std::vector<std::size_t> s(source.begin(), source.end()), t(target.begin(), target.end());
  return make_op(std::move(out), {weight, x}, [wn, xn, s = std::move(s), t = std::move(t), width](Node& self) {
    const double* g = self.grad.data();
    if (needs_grad(wn)) {
      Array& gw = wn->grad_buffer();
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* src = xn->value.data() + s[e] * width;
        const double* gt = g + t[e] * width;
        double acc = 0.0;
        for (std::size_t c = 0; c < width; ++c) acc += gt[c] * src[c];
        gw[e] += acc;
      }
    }
    if (needs_grad(xn)) {
      double* gx = xn->grad_buffer().data();
      const Array& w = wn->value;
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* gt = g + t[e] * width;
        double* dst = gx + s[e] * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += w[e] * gt[c];
      }
    }
  });
}

}  // namespace sta4clc::ad
