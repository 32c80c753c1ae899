#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace labelformer::nn {

using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value in the computation graph. `backward_fn` reads this
// node's grad and accumulates into the parents' grads.
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<Real>& ensure_grad();
};

// Handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Size of dimension `axis`; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const Real> values() const { return node_->value; }
  std::span<Real> mutable_values() { return node_->value; }
  // Empty until backward has reached this tensor.
  std::span<const Real> grad() const { return node_->grad; }
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Creates a node for an op result. Parents that do not require grad are not
// retained, and no backward closure is kept when nothing upstream needs grad.
Tensor make_result(const char* op, Shape shape, std::vector<Real> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Each node's backward runs exactly
// once; calling backward again on the same graph throws std::logic_error.
void backward(const Tensor& loss);

// NaN/Inf checking after every op (on by default). Thread-safe toggle.
void set_check_finite(bool enabled);
bool check_finite_enabled();
void check_finite(const char* op, std::span<const Real> values);

// Normalizes a possibly negative axis against `rank`; throws on out-of-range.
std::size_t resolve_axis(int axis, std::size_t rank, const char* op);

}  // namespace labelformer::nn
