#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convseq/model.hpp"

namespace convseq {

// Constants of the factored second-moment optimizer. The decay schedule is
// beta2(t) = 1 - t^decay_exponent, so the first step uses g^2 directly.
struct AdafactorOptions {
  double decay_exponent = -0.8;
  double eps = 1e-30;           // added to g^2
  double clip_threshold = 1.0;  // max RMS of the normalized update
};

struct AdafactorSlot {
  bool factored = false;
  std::vector<double> row;   // [rows], factored only
  std::vector<double> col;   // [cols], factored only
  std::vector<double> full;  // [numel], unfactored only
};

struct OptimizerState {
  AdafactorOptions options;
  std::uint64_t step = 0;
  std::vector<std::string> names;  // parallel to slots
  std::vector<AdafactorSlot> slots;
};

// Fresh state shaped after the store: matrices factored, the rest full.
OptimizerState make_optimizer_state(const ParameterStore& params, AdafactorOptions options = {});

// Second-moment estimate the state currently implies for slot i.
std::vector<double> second_moment_estimate(const OptimizerState& state, std::size_t i);

// One update from the accumulated grads in `params`. Throws NumericalError
// naming the parameter if any gradient is non-finite; nothing is modified in
// that case.
void adafactor_step(ParameterStore& params, OptimizerState& state, double lr);

enum class LrMode { inverse_sqrt, constant };

struct LrSchedule {
  LrMode mode = LrMode::inverse_sqrt;
  double constant = 0.001;
  std::uint64_t warmup = 10000;
};

// inverse_sqrt: 1 / sqrt(max(step, warmup)); constant: the configured value.
double lr_at(std::uint64_t step, const LrSchedule& schedule);

// Constant learning rates searched during fine-tuning.
inline constexpr double kFinetuneLrGrid[] = {0.001, 0.0005, 0.0001};

}  // namespace convseq
