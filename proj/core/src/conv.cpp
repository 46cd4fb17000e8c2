#include "convseq/conv.hpp"

#include <string>

#include "autograd_util.hpp"
#include "convseq/errors.hpp"
#include "convseq/flop_counter.hpp"
#include "convseq/ops.hpp"

namespace convseq {

using detail::make_result;
using detail::Node;
using detail::parent_grad;
using detail::parent_value;

namespace {

void check_sequence(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + " expects an [n x d] sequence, got " +
                         shape_string(x.shape()));
  }
}

void check_dilation(std::size_t dilation) {
  if (dilation < 1) throw ContractError("dilation must be at least 1");
}

// Precomputed tap offsets for one layer.
std::vector<std::ptrdiff_t> offsets(std::size_t width, std::size_t dilation, Padding padding) {
  std::vector<std::ptrdiff_t> out(width);
  for (std::size_t t = 0; t < width; ++t) out[t] = tap_offset(t, width, dilation, padding);
  return out;
}

}  // namespace

std::ptrdiff_t tap_offset(std::size_t tap, std::size_t width, std::size_t dilation,
                          Padding padding) {
  const auto j = static_cast<std::ptrdiff_t>(tap);
  const auto k = static_cast<std::ptrdiff_t>(width);
  const auto dil = static_cast<std::ptrdiff_t>(dilation);
  if (padding == Padding::causal_left) return (j - (k - 1)) * dil;
  // 1-based tap j+1 minus ceil((k+1)/2).
  return (j + 1 - (k + 2) / 2) * dil;
}

std::size_t tied_row(std::size_t channel, std::size_t heads, std::size_t channels) {
  return channel * heads / channels;
}

Tensor tied_conv(const Tensor& x, const Tensor& kernels, std::size_t dilation, Padding padding) {
  check_sequence(x, "tied_conv");
  check_dilation(dilation);
  if (kernels.rank() != 2) {
    throw DimensionError("tied_conv: kernels must be [H x k], got " + shape_string(kernels.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t heads = kernels.dim(0), k = kernels.dim(1);
  if (d % heads != 0) {
    throw ContractError("tied_conv: H = " + std::to_string(heads) + " does not divide d = " +
                        std::to_string(d));
  }
  const auto offs = offsets(k, dilation, padding);
  const auto xv = x.values();
  const auto kv = kernels.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double* w = kv.data() + tied_row(c, heads, d) * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const auto src = static_cast<std::ptrdiff_t>(i) + offs[t];
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        acc += w[t] * xv[static_cast<std::size_t>(src) * d + c];
      }
      out[i * d + c] = acc;
    }
  }
  FlopCounter::record(static_cast<std::uint64_t>(n) * d * k);
  return make_result({n, d}, std::move(out), "tied_conv", {x, kernels},
                     [n, d, heads, k, offs](Node& self) {
                       const double* xv = parent_value(self, 0);
                       const double* kv = parent_value(self, 1);
                       double* gx = parent_grad(self, 0);
                       double* gk = parent_grad(self, 1);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t c = 0; c < d; ++c) {
                           const double g = self.grad[i * d + c];
                           const std::size_t row = tied_row(c, heads, d) * k;
                           for (std::size_t t = 0; t < k; ++t) {
                             const auto src = static_cast<std::ptrdiff_t>(i) + offs[t];
                             if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                             const std::size_t xi = static_cast<std::size_t>(src) * d + c;
                             if (gx) gx[xi] += g * kv[row + t];
                             if (gk) gk[row + t] += g * xv[xi];
                           }
                         }
                       }
                     });
}

Tensor positional_conv(const Tensor& x, const Tensor& kernels, std::size_t dilation,
                       Padding padding) {
  check_sequence(x, "positional_conv");
  check_dilation(dilation);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (kernels.rank() != 3 || kernels.dim(0) != n) {
    throw DimensionError("positional_conv: kernels must be [n x H x k] with n = " +
                         std::to_string(n) + ", got " + shape_string(kernels.shape()));
  }
  const std::size_t heads = kernels.dim(1), k = kernels.dim(2);
  if (d % heads != 0) {
    throw ContractError("positional_conv: H = " + std::to_string(heads) +
                        " does not divide d = " + std::to_string(d));
  }
  const auto offs = offsets(k, dilation, padding);
  const auto xv = x.values();
  const auto kv = kernels.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double* w = kv.data() + (i * heads + tied_row(c, heads, d)) * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const auto src = static_cast<std::ptrdiff_t>(i) + offs[t];
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        acc += w[t] * xv[static_cast<std::size_t>(src) * d + c];
      }
      out[i * d + c] = acc;
    }
  }
  FlopCounter::record(static_cast<std::uint64_t>(n) * d * k);
  return make_result({n, d}, std::move(out), "positional_conv", {x, kernels},
                     [n, d, heads, k, offs](Node& self) {
                       const double* xv = parent_value(self, 0);
                       const double* kv = parent_value(self, 1);
                       double* gx = parent_grad(self, 0);
                       double* gk = parent_grad(self, 1);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t c = 0; c < d; ++c) {
                           const double g = self.grad[i * d + c];
                           const std::size_t row = (i * heads + tied_row(c, heads, d)) * k;
                           for (std::size_t t = 0; t < k; ++t) {
                             const auto src = static_cast<std::ptrdiff_t>(i) + offs[t];
                             if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                             const std::size_t xi = static_cast<std::size_t>(src) * d + c;
                             if (gx) gx[xi] += g * kv[row + t];
                             if (gk) gk[row + t] += g * xv[xi];
                           }
                         }
                       }
                     });
}

Tensor depthwise_conv(const Tensor& x, const DepthwiseKernel& kernel, Padding padding) {
  check_sequence(x, "depthwise_conv");
  if (kernel.weight.rank() != 2 || kernel.channels() != x.dim(1)) {
    throw DimensionError("depthwise_conv: kernel " + shape_string(kernel.weight.shape()) +
                         " does not match input channels of " + shape_string(x.shape()));
  }
  // One row per channel is tying with H = d.
  return tied_conv(x, kernel.weight, kernel.dilation, padding);
}

Tensor lightweight_conv(const Tensor& x, const TiedKernel& kernel, Padding padding) {
  check_sequence(x, "lightweight_conv");
  if (kernel.weight.rank() != 2) {
    throw DimensionError("lightweight_conv: kernel must be [H x k], got " +
                         shape_string(kernel.weight.shape()));
  }
  if (x.dim(1) % kernel.heads() != 0) {
    throw ContractError("lightweight_conv: H = " + std::to_string(kernel.heads()) +
                        " does not divide d = " + std::to_string(x.dim(1)));
  }
  return tied_conv(x, softmax(kernel.weight, 1), kernel.dilation, padding);
}

Tensor dynamic_kernels(const Tensor& x, const DynamicKernelGenerator& generator) {
  check_sequence(x, "dynamic_conv");
  const auto& proj = generator.projection;
  if (proj.rank() != 2 || proj.dim(0) != x.dim(1) ||
      proj.dim(1) != generator.heads * generator.width) {
    throw DimensionError("dynamic_conv: generator " + shape_string(proj.shape()) +
                         " does not map width " + std::to_string(x.dim(1)) + " to H*k = " +
                         std::to_string(generator.heads * generator.width));
  }
  const Tensor logits = matmul(x, proj);
  return softmax(reshape(logits, {x.dim(0), generator.heads, generator.width}), 2);
}

Tensor dynamic_conv(const Tensor& x, const DynamicKernelGenerator& generator, Padding padding) {
  if (generator.heads == 0 || x.rank() != 2 || x.dim(1) % generator.heads != 0) {
    throw ContractError("dynamic_conv: H = " + std::to_string(generator.heads) +
                        " does not divide the input width");
  }
  return positional_conv(x, dynamic_kernels(x, generator), generator.dilation, padding);
}

std::vector<LayerScheduleEntry> make_layer_schedule(ConvVariant variant, std::size_t num_layers,
                                                    std::size_t dilation) {
  if (num_layers < 1) throw ContractError("layer schedule needs at least one layer");
  check_dilation(dilation);
  static constexpr std::size_t kDilatedWidths[] = {4, 4, 7, 7, 15, 15, 15, 15, 31, 31, 31};
  std::vector<LayerScheduleEntry> schedule;
  schedule.reserve(num_layers);
  for (std::size_t layer = 0; layer < num_layers; ++layer) {
    switch (variant) {
      case ConvVariant::light:
      case ConvVariant::dynamic:
        schedule.push_back({layer, 7, 1});
        break;
      case ConvVariant::dilated: {
        constexpr std::size_t listed = std::size(kDilatedWidths);
        const std::size_t width = kDilatedWidths[layer < listed ? layer : listed - 1];
        schedule.push_back({layer, width, dilation});
        break;
      }
      default:
        throw ContractError("no convolution schedule for variant " +
                            std::string(to_string(variant)));
    }
  }
  return schedule;
}

}  // namespace convseq
