#pragma once

#include <cstddef>
#include <vector>

#include "convseq/config.hpp"
#include "convseq/tensor.hpp"

namespace convseq {

enum class Padding {
  same_zero,    // window centered as O_{i} = sum_j W_j X_{i + j - ceil((k+1)/2)}
  causal_left,  // window ends at i; output i never reads positions > i
};

// One k-tap filter per channel: weight is [d x k].
struct DepthwiseKernel {
  Tensor weight;
  std::size_t dilation = 1;

  std::size_t channels() const { return weight.dim(0); }
  std::size_t width() const { return weight.dim(1); }
};

// H filter rows shared across contiguous groups of d/H channels: weight is
// [H x k] and is softmax-normalized over taps before use.
struct TiedKernel {
  Tensor weight;
  std::size_t dilation = 1;

  std::size_t heads() const { return weight.dim(0); }
  std::size_t width() const { return weight.dim(1); }
};

// Linear map from a position's d features to H x k kernel logits, stored as a
// [d x (H*k)] projection.
struct DynamicKernelGenerator {
  Tensor projection;
  std::size_t heads = 1;
  std::size_t width = 1;
  std::size_t dilation = 1;
};

// Offset from output position i read by tap j (0-based), scaled by dilation.
std::ptrdiff_t tap_offset(std::size_t tap, std::size_t width, std::size_t dilation,
                          Padding padding);

// Tied row used by channel c: floor(c * H / d).
std::size_t tied_row(std::size_t channel, std::size_t heads, std::size_t channels);

Tensor depthwise_conv(const Tensor& x, const DepthwiseKernel& kernel, Padding padding);
Tensor lightweight_conv(const Tensor& x, const TiedKernel& kernel, Padding padding);
Tensor dynamic_conv(const Tensor& x, const DynamicKernelGenerator& generator, Padding padding);

// Building blocks of the two normalized variants, exposed for inspection.
// `kernels` is already normalized: [H x k] shared by all positions.
Tensor tied_conv(const Tensor& x, const Tensor& kernels, std::size_t dilation, Padding padding);
// `kernels` is [n x H x k], one kernel set per output position.
Tensor positional_conv(const Tensor& x, const Tensor& kernels, std::size_t dilation,
                       Padding padding);
// Softmax-normalized per-position kernels [n x H x k] of a dynamic layer.
Tensor dynamic_kernels(const Tensor& x, const DynamicKernelGenerator& generator);

// light/dynamic: width 7 everywhere. dilated: 4,4,7,7,15,15,15,15,31,31,31,
// then 31 repeated for deeper stacks. Dilation rate applies to every layer.
std::vector<LayerScheduleEntry> make_layer_schedule(ConvVariant variant, std::size_t num_layers,
                                                    std::size_t dilation = 1);

}  // namespace convseq
