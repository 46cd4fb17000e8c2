#include "convseq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "autograd_util.hpp"
#include "convseq/errors.hpp"
#include "convseq/flop_counter.hpp"
#include "gemm.hpp"

namespace convseq {

using detail::make_result;
using detail::Node;
using detail::parent_grad;
using detail::parent_value;

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Applies f elementwise, with df(x, y) giving the local derivative.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
    double* gx = parent_grad(self, 0);
    const double* xv = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * df(xv[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  FlopCounter::record(static_cast<std::uint64_t>(m) * k * n);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) detail::gemm_nt(m, n, k, g, parent_value(self, 1), ga);
    if (double* gb = parent_grad(self, 1)) detail::gemm_tn(k, m, n, parent_value(self, 0), g, gb);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt(m, k, n, a.values().data(), b.values().data(), out.data());
  FlopCounter::record(static_cast<std::uint64_t>(m) * k * n);
  return make_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    // C = A B^T: dA = dC B, dB = dC^T A
    if (double* ga = parent_grad(self, 0)) detail::gemm_nn(m, n, k, g, parent_value(self, 1), ga);
    if (double* gb = parent_grad(self, 1)) detail::gemm_tn(n, m, k, g, parent_value(self, 0), gb);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const double* av = parent_value(self, 0);
    const double* bv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary(
      x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  if (x.rank() == 0 || v.rank() != 1 || v.dim(0) != x.shape().back()) {
    throw DimensionError("add_row_vector: cannot broadcast " + shape_string(v.shape()) +
                         " over " + shape_string(x.shape()));
  }
  const std::size_t d = v.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i % d];
  return make_result(x.shape(), std::move(out), "add_row_vector", {x, v}, [d](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      double max_v = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) max_v = std::max(max_v, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(in[base + j * inner] - max_v);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result(shape, std::move(out), "softmax", {x}, [outer, inner, len](Node& self) {
    double* gx = parent_grad(self, 0);
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t base = o * len * inner + s;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: needs at least one axis");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                         shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  }
  if (eps < 0) throw ContractError("layer_norm: eps must be nonnegative");
  if (d == 1 && eps == 0) {
    throw ContractError("layer_norm: width 1 with eps = 0 divides by zero variance");
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    if (var + eps == 0.0) throw ContractError("layer_norm: zero variance with eps = 0");
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double z = (row[j] - mu) * inv_std[r];
      normalized[r * d + j] = z;
      out[r * d + j] = gv[j] * z + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        const double* gamma_v = parent_value(self, 1);
        double* gx = parent_grad(self, 0);
        double* gg = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = self.grad.data() + r * d;
          const double* z = normalized.data() + r * d;
          double sum_gz = 0.0, sum_gz_z = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gzj = gy[j] * gamma_v[j];
            sum_gz += gzj;
            sum_gz_z += gzj * z[j];
            if (gg) gg[j] += gy[j] * z[j];
            if (gb) gb[j] += gy[j];
          }
          if (!gx) continue;
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gzj = gy[j] * gamma_v[j];
            gx[r * d + j] += inv_std[r] * (gzj - inv_d * sum_gz - z[j] * inv_d * sum_gz_z);
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({}, {total}, "sum", {x}, [](Node& self) {
    double* g = parent_grad(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(rows[i]) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    std::copy_n(tv.data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = rows.size();
  return make_result({n, d}, std::move(out), "embedding", {table},
                     [d, rows = std::move(rows)](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[rows[i] * d + j] += self.grad[i * d + j];
                         }
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (count == 0 || start + count > d) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(x.shape()));
  }
  std::vector<double> out(n * count);
  const auto in = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(in.data() + i * d + start, count, out.data() + i * count);
  }
  return make_result({n, count}, std::move(out), "slice_cols", {x},
                     [n, d, start, count](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < count; ++j) {
                           g[i * d + start + j] += self.grad[i * count + j];
                         }
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t n = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != n) {
      throw DimensionError("concat_cols: row counts differ, " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto in = parts[p].values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(in.data() + i * widths[p], widths[p], out.data() + i * total + offset);
    }
    offset += widths[p];
  }
  return make_result({n, total}, std::move(out), "concat_cols", parts,
                     [n, total, widths = std::move(widths)](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         if (double* g = parent_grad(self, p)) {
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t j = 0; j < widths[p]; ++j) {
                               g[i * widths[p] + j] += self.grad[i * total + offset + j];
                             }
                           }
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0 || rate >= 1) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv_keep = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? inv_keep : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace convseq
