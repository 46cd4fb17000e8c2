#pragma once

#include <functional>
#include <vector>

#include "convseq/tensor.hpp"

namespace convseq::detail {

// Wraps a freshly computed value as a tape node. History is only kept when
// some operand requires a gradient.
inline Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                          const std::vector<Tensor>& operands,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& t : operands) node->requires_grad = node->requires_grad || t.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(operands.size());
    for (const auto& t : operands) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Grad buffer of parent i, or nullptr when that operand is a constant.
inline double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline const double* parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value.data();
}

}  // namespace convseq::detail
