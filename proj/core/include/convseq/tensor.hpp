#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace convseq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One recorded value in the eager tape. Edges point from a result to the
// operands it was computed from, so the graph is acyclic by construction.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major array of doubles. Copies share the underlying node, so a
// Tensor behaves like a handle; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values,
                       bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  bool defined() const { return node_ != nullptr; }

  std::span<const double> values() const { return node_->value; }
  // Writes bypass the tape; only use on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient accumulated by backward(); all zeros when never reached.
  std::vector<double> grad() const;
  void zero_grad();

  bool is_leaf() const { return !node_->backward; }
  const char* op_name() const { return node_->op; }
  const void* id() const { return node_.get(); }

  // Same values, no history.
  Tensor detach() const;
  // Deep copy of values; keeps requires_grad, drops history and grad.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-topological view of every node reachable from a root.
class ComputationGraph {
 public:
  explicit ComputationGraph(const Tensor& root);

  // Operands precede results.
  const std::vector<detail::Node*>& topological_order() const { return order_; }
  std::size_t size() const { return order_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every recorded backward rule once,
  // results before operands. Leaf grads accumulate across calls.
  void backward();

 private:
  Tensor root_;
  std::vector<detail::Node*> order_;
};

// Convenience: ComputationGraph(loss).backward(). Throws ContractError when
// the loss is not a scalar.
void backward(const Tensor& loss);

}  // namespace convseq
