#pragma once

// Reverse-mode automatic differentiation over dense double arrays.
//
// A Var is a handle to a graph node holding a value, a lazily allocated
// gradient and a backward rule. Parameters are leaf Vars created with
// requires_grad; every op returns a fresh node. backward() walks the graph
// in reverse topological order (deterministic DFS post-order).

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sta4clc::ad {

using Shape = std::vector<std::size_t>;

// Vectorized reductions peel up to the first aligned element, so their
// rounding depends on the buffer address. Fixed 64-byte alignment keeps
// results identical across runs and threads.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Contiguous row-major array of up to three axes.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  /// Same data, new shape with equal element count.
  Array reshaped(Shape shape) const;
  void fill(double v);

 private:
  Shape shape_;
  Storage data_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Array value;
  Array grad;  // empty until first accumulation
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::string name;

  Array& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Array value);
  static Var parameter(Array value, std::string name);

  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Array& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad();

 private:
  NodePtr node_;
};

/// Accumulates d(loss)/d(node) for every node reachable from a scalar loss.
/// Throws std::invalid_argument for a non-scalar loss.
void backward(const Var& loss);

// ---- primitive ops -------------------------------------------------------

/// x[..., k] @ w[k, n] -> [..., n]; leading axes of x are flattened.
Var matmul(const Var& x, const Var& w);
/// Batched product over axis 0: a[b, m, k] @ b[b, k, n], or b[b, n, k]^T when
/// transpose_b is set.
Var bmm(const Var& a, const Var& b, bool transpose_b = false);
/// Result has a's shape; b broadcasts into it (each of b's right-aligned
/// axes is 1 or equal to a's).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var concat(const std::vector<Var>& parts);  // along the last axis
Var row_softmax(const Var& x);              // over the last axis
Var log_softmax(const Var& x);              // over the last axis
Var tanh(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var softplus(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]
/// Mean over axis 1 of a rank-3 array: [b, t, d] -> [b, d].
Var mean_axis1(const Var& x);
/// Entries with mask != 0 are replaced by fill_value and receive no gradient.
Var masked_fill(const Var& x, std::span<const unsigned char> mask, double fill_value);
Var transpose(const Var& x);  // rank-2
Var reshape(const Var& x, Shape shape);
/// Columns [start, start + count) of a rank-2 array.
Var slice_cols(const Var& x, std::size_t start, std::size_t count);
/// out[e] = x[index[e]] for a rank-2 x.
Var gather_rows(const Var& x, std::span<const std::size_t> index);
/// Softmax of logits[e, 0] within each segment: entries sharing segment[e].
Var segment_softmax(const Var& logits, std::span<const std::size_t> segment, std::size_t n_segments);
/// out[target[e]] += weight[e] * x[source[e]] for rank-2 x and weight [E, 1].
Var edge_aggregate(const Var& weight, const Var& x, std::span<const std::size_t> source,
                   std::span<const std::size_t> target, std::size_t n_out);

/// Builds a node from a precomputed value and a custom backward rule.
/// The rule receives the node (its grad is the upstream gradient).
Var make_op(Array value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

}  // namespace sta4clc::ad
