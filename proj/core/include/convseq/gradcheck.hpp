#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "convseq/tensor.hpp"

namespace convseq {

struct GradCheckOptions {
  double step = 1e-5;        // central difference half-width
  double tolerance = 1e-4;   // on the relative error below
  double floor = 1e-3;       // denominator floor for near-zero gradients
  std::size_t max_entries = 0;  // per input; 0 checks every entry
  std::uint64_t seed = 7;       // picks entries when max_entries is set
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor);

// Compares backward() of a scalar loss against central differences with
// respect to every entry of every input. `loss` must rebuild the graph from
// the current input values on each call.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss,
                                std::vector<Tensor> inputs, const GradCheckOptions& options = {});

// Every differentiable op, each convolution variant, and a miniature model
// (2 layers, d = 8) of every architecture variant.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace convseq
