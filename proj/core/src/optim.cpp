#include "convseq/optim.hpp"

#include <algorithm>
#include <cmath>

#include "convseq/errors.hpp"

namespace convseq {

OptimizerState make_optimizer_state(const ParameterStore& params, AdafactorOptions options) {
  OptimizerState state;
  state.options = options;
  for (const auto& [name, t] : params.items()) {
    AdafactorSlot slot;
    if (t.rank() == 2) {
      slot.factored = true;
      slot.row.assign(t.dim(0), 0.0);
      slot.col.assign(t.dim(1), 0.0);
    } else {
      slot.full.assign(t.numel(), 0.0);
    }
    state.names.push_back(name);
    state.slots.push_back(std::move(slot));
  }
  return state;
}

std::vector<double> second_moment_estimate(const OptimizerState& state, std::size_t i) {
  const auto& slot = state.slots.at(i);
  if (!slot.factored) return slot.full;
  const std::size_t rows = slot.row.size(), cols = slot.col.size();
  double row_mean = 0.0;
  for (double r : slot.row) row_mean += r;
  row_mean /= static_cast<double>(rows);
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = slot.row[r] * slot.col[c] / row_mean;
  }
  return v;
}

void adafactor_step(ParameterStore& params, OptimizerState& state, double lr) {
  if (state.slots.size() != params.size()) {
    throw ContractError("optimizer state does not match the parameter store");
  }
  const auto& items = params.items();
  std::vector<std::vector<double>> grads;
  grads.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].first != state.names[i]) {
      throw ContractError("optimizer slot " + state.names[i] + " does not match parameter " +
                          items[i].first);
    }
    grads.push_back(items[i].second.grad());
    for (double g : grads.back()) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in " + items[i].first + "; step rejected");
      }
    }
  }

  const auto& opt = state.options;
  state.step += 1;
  const double beta = 1.0 - std::pow(static_cast<double>(state.step), opt.decay_exponent);
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor param = items[i].second;
    auto& slot = state.slots[i];
    const auto& g = grads[i];
    std::vector<double> g2(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) g2[j] = g[j] * g[j] + opt.eps;

    if (slot.factored) {
      const std::size_t rows = slot.row.size(), cols = slot.col.size();
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_r = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean_r += g2[r * cols + c];
        slot.row[r] = beta * slot.row[r] + (1.0 - beta) * mean_r / static_cast<double>(cols);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        double mean_c = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mean_c += g2[r * cols + c];
        slot.col[c] = beta * slot.col[c] + (1.0 - beta) * mean_c / static_cast<double>(rows);
      }
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) {
        slot.full[j] = beta * slot.full[j] + (1.0 - beta) * g2[j];
      }
    }

    const auto v = second_moment_estimate(state, i);
    std::vector<double> update(g.size());
    double sq = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      update[j] = g[j] / std::sqrt(v[j]);
      sq += update[j] * update[j];
    }
    const double rms = std::sqrt(sq / static_cast<double>(g.size()));
    const double denom = std::max(1.0, rms / opt.clip_threshold);
    auto values = param.mutable_values();
    for (std::size_t j = 0; j < g.size(); ++j) values[j] -= lr * (update[j] / denom);
  }
}

double lr_at(std::uint64_t step, const LrSchedule& schedule) {
  if (schedule.mode == LrMode::constant) return schedule.constant;
  const auto s = std::max<std::uint64_t>(step, std::max<std::uint64_t>(schedule.warmup, 1));
  return 1.0 / std::sqrt(static_cast<double>(s));
}

}  // namespace convseq
