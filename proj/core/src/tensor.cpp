#include "convseq/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "convseq/errors.hpp"

namespace convseq {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor(Shape{values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> flat;
  flat.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor(Shape{n_rows, n_cols}, std::move(flat), requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a matrix");
  return node_->value.at(row * node_->shape[1] + col);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, requires_grad()); }

ComputationGraph::ComputationGraph(const Tensor& root) : root_(root) {
  // Iterative post-order DFS; each node is emitted after all its parents.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

void ComputationGraph::backward() {
  auto* root = root_.node().get();
  if (root->value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) return;
  root->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void backward(const Tensor& loss) { ComputationGraph(loss).backward(); }

}  // namespace convseq
