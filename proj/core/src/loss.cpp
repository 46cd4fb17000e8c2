#include "convseq/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "autograd_util.hpp"
#include "convseq/errors.hpp"

namespace convseq {

Tensor seq_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> pad_mask) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("seq_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!pad_mask.empty() && pad_mask.size() != targets.size()) {
    throw DimensionError("seq_cross_entropy: pad mask length differs from targets");
  }
  const std::size_t m = logits.dim(0), vocab = logits.dim(1);
  std::vector<std::uint8_t> active(m, 1);
  std::size_t count = 0;
  for (std::size_t t = 0; t < m; ++t) {
    if (!pad_mask.empty() && pad_mask[t]) active[t] = 0;
    if (!active[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw DimensionError("seq_cross_entropy: target " + std::to_string(targets[t]) +
                           " outside vocabulary of " + std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw ContractError("seq_cross_entropy: every position is padding, mean undefined");

  // Cache softmax rows for the backward pass.
  std::vector<double> probs(m * vocab, 0.0);
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    if (!active[t]) continue;
    const double* row = lv.data() + t * vocab;
    const double max_v = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - max_v);
    const double log_z = max_v + std::log(z);
    total += log_z - row[targets[t]];
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] = std::exp(row[j] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  return detail::make_result(
      {}, {total * inv_count}, "seq_cross_entropy", {logits},
      [m, vocab, inv_count, probs = std::move(probs), tgt = std::move(tgt),
       active = std::move(active)](detail::Node& self) {
        double* g = detail::parent_grad(self, 0);
        const double scale = self.grad[0] * inv_count;
        for (std::size_t t = 0; t < m; ++t) {
          if (!active[t]) continue;
          for (std::size_t j = 0; j < vocab; ++j) g[t * vocab + j] += scale * probs[t * vocab + j];
          g[t * vocab + tgt[t]] -= scale;
        }
      });
}

}  // namespace convseq
