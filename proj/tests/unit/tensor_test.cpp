#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "convseq/errors.hpp"
#include "convseq/ops.hpp"
#include "convseq/tensor.hpp"
#include "oracles.hpp"

using namespace convseq;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), shape_numel(t.shape()));
}

TEST(Tensor, CloneIsDeep) {
  Tensor a = Tensor::vector({1, 2}, true);
  Tensor b = a.clone();
  b.mutable_values()[0] = 9;
  EXPECT_EQ(a.at(0), 1);
  EXPECT_TRUE(b.requires_grad());
}

TEST(Matmul, Identity) {
  auto c = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(vals(c), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, Zero) {
  auto c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{0}, {0}}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.at(0), 0.0);
}

TEST(Matmul, HandComputed) {
  auto c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(vals(c), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, MatchesOracleAndTransposedVariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 5, k = 1 + rng() % 5, n = 1 + rng() % 5;
    auto a = oracle::random_matrix(m * k, rng);
    auto b = oracle::random_matrix(k * n, rng);
    std::vector<double> bt(n * k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
    const auto want = oracle::matmul(a, b, m, k, n);
    EXPECT_LT(oracle::max_abs_diff(vals(matmul(Tensor({m, k}, a), Tensor({k, n}, b))), want), 1e-12);
    EXPECT_LT(oracle::max_abs_diff(vals(matmul_nt(Tensor({m, k}, a), Tensor({n, k}, bt))), want),
              1e-12);
  }
}

TEST(Matmul, BackwardRules) {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}}, true);
  Tensor b = Tensor::matrix({{5, 6}, {7, 8}}, true);
  backward(sum(matmul(a, b)));
  // dA = 1 * B^T, dB = A^T * 1
  EXPECT_EQ(a.grad(), (std::vector<double>{11, 15, 11, 15}));
  EXPECT_EQ(b.grad(), (std::vector<double>{4, 4, 6, 6}));
}

TEST(Softmax, Constant) {
  for (double c : {-5.0, 0.0, 42.0}) {
    auto s = softmax(Tensor::vector({c, c, c}), 0);
    for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(Softmax, ClosedForm) {
  auto s = softmax(Tensor::vector({0, std::log(2.0)}), 0);
  EXPECT_NEAR(s.at(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.at(1), 2.0 / 3.0, 1e-15);
}

TEST(Softmax, Stable) {
  auto s = softmax(Tensor::vector({1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(s.at(0)));
  EXPECT_NEAR(s.at(0), 1.0, 1e-12);
  EXPECT_NEAR(s.at(1), 0.0, 1e-12);
}

TEST(Softmax, SumsToOneOnEitherAxis) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng() % 6, c = 1 + rng() % 6;
    Tensor x({r, c}, oracle::random_matrix(r * c, rng, -30, 30));
    auto rows = softmax(x, 1);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += rows.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    auto cols = softmax(x, 0);
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < r; ++i) s += cols.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, NegativeInfinityGivesExactZero) {
  auto s = softmax(Tensor::vector({0, -std::numeric_limits<double>::infinity(), 0}), 0);
  EXPECT_EQ(s.at(1), 0.0);
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
}

TEST(Softmax, AxisOutOfRange) { EXPECT_THROW(softmax(Tensor::vector({1, 2}), 1), DimensionError); }

TEST(LayerNorm, ConstantRowsGiveZeros) {
  auto y = layer_norm(Tensor::matrix({{4, 4, 4}, {-1, -1, -1}}), Tensor::full({3}, 1),
                      Tensor::zeros({3}), 1e-6);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ClosedForm) {
  auto y = layer_norm(Tensor::matrix({{1, 3}}), Tensor::full({2}, 1), Tensor::zeros({2}), 0.0);
  EXPECT_DOUBLE_EQ(y.at(0), -1.0);
  EXPECT_DOUBLE_EQ(y.at(1), 1.0);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  auto y = layer_norm(Tensor::matrix({{1, 5, -2}, {0.3, 2, 7}}), Tensor::zeros({3}),
                      Tensor::vector({0.5, -1, 2}), 1e-6);
  EXPECT_EQ(vals(y), (std::vector<double>{0.5, -1, 2, 0.5, -1, 2}));
}

TEST(LayerNorm, DivisionGuard) {
  EXPECT_THROW(layer_norm(Tensor::matrix({{2}}), Tensor::full({1}, 1), Tensor::zeros({1}), 0.0),
               ContractError);
}

TEST(LayerNorm, MeanZeroVarianceOne) {
  std::mt19937_64 rng(5);
  Tensor x({4, 6}, oracle::random_matrix(24, rng, -3, 3));
  auto y = layer_norm(x, Tensor::full({6}, 1), Tensor::zeros({6}), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 6; ++j) m += y.at(i, j) / 6;
    for (std::size_t j = 0; j < 6; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m) / 6;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
  EXPECT_EQ(vals(relu(Tensor::vector({-1, 2}))), (std::vector<double>{0, 2}));
  EXPECT_EQ(vals(mul(Tensor::vector({3, -4}), Tensor::zeros({2}))), (std::vector<double>{0, 0}));
  EXPECT_EQ(vals(scale(Tensor::vector({1, -2}), 3)), (std::vector<double>{3, -6}));
  EXPECT_EQ(vals(add(Tensor::vector({1, 2}), Tensor::vector({3, 4}))), (std::vector<double>{4, 6}));
  EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), DimensionError);
}

TEST(Elementwise, DerivativeRules) {
  Tensor x = Tensor::vector({-1.5, 0.0, 2.0}, true);
  backward(sum(sigmoid(x)));
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = 1 / (1 + std::exp(-x.at(i)));
    EXPECT_NEAR(x.grad()[i], s * (1 - s), 1e-15);
  }
  Tensor y = Tensor::vector({-1, 2}, true);
  backward(sum(relu(y)));
  EXPECT_EQ(y.grad(), (std::vector<double>{0, 1}));
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::matrix({{1, -2, 3}, {0.5, 7, 8}}, true);
  backward(sum(x));
  EXPECT_EQ(x.grad(), std::vector<double>(6, 1.0));
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::vector({1, -2}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad(), (std::vector<double>{2, -4}));
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2)), ContractError);
}

TEST(Backward, UnreachedParameterHasZeroGrad) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor unused = Tensor::vector({3, 4}, true);
  backward(sum(x));
  EXPECT_EQ(unused.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, GradHasValueShape) {
  Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Backward, DisjointSubgraphsAreAdditive) {
  std::mt19937_64 rng(9);
  const auto av = oracle::random_matrix(6, rng), bv = oracle::random_matrix(6, rng);
  auto make = [&] {
    return std::pair{Tensor({2, 3}, av, true), Tensor({3, 2}, bv, true)};
  };
  auto [a1, b1] = make();
  backward(add(sum(mul(a1, a1)), sum(relu(b1))));
  auto [a2, b2] = make();
  backward(sum(mul(a2, a2)));
  backward(sum(relu(b2)));
  EXPECT_EQ(a1.grad(), a2.grad());
  EXPECT_EQ(b1.grad(), b2.grad());
}

TEST(Graph, TopologicalOrderVisitsEachNodeOnce) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y = mul(x, x);  // x reached twice
  Tensor z = add(y, x);
  Tensor loss = sum(add(z, y));
  ComputationGraph g(loss);
  std::set<const void*> seen;
  for (auto* n : g.topological_order()) EXPECT_TRUE(seen.insert(n).second);
  EXPECT_EQ(g.size(), 5u);
  EXPECT_EQ(g.topological_order().back(), loss.node().get());
  g.backward();
  // d/dx (2x^2 + x) = 4x + 1
  EXPECT_EQ(x.grad(), (std::vector<double>{5, 9}));
}

TEST(Graph, DetachStopsGradient) {
  Tensor x = Tensor::vector({3}, true);
  backward(sum(mul(x.detach(), x)));
  EXPECT_EQ(x.grad(), (std::vector<double>{3}));
}

TEST(Shapes, SliceConcatReshape) {
  Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(vals(slice_cols(x, 1, 2)), (std::vector<double>{2, 3, 5, 6}));
  auto c = concat_cols({slice_cols(x, 0, 1), slice_cols(x, 1, 2)});
  EXPECT_EQ(vals(c), vals(x));
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(x, {4, 2}), DimensionError);
  EXPECT_THROW(slice_cols(x, 2, 2), DimensionError);
}

TEST(Shapes, AddRowVectorAndEmbedding) {
  auto y = add_row_vector(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({10, 20}));
  EXPECT_EQ(vals(y), (std::vector<double>{11, 22, 13, 24}));
  Tensor table = Tensor::matrix({{0, 0}, {1, 1}, {2, 3}}, true);
  std::vector<std::int32_t> ids{2, 1, 2};
  auto e = embedding(table, ids);
  EXPECT_EQ(e.shape(), (Shape{3, 2}));
  EXPECT_EQ(vals(e), (std::vector<double>{2, 3, 1, 1, 2, 3}));
  backward(sum(e));
  EXPECT_EQ(table.grad(), (std::vector<double>{0, 0, 1, 1, 2, 2}));
  std::vector<std::int32_t> bad{3};
  EXPECT_THROW(embedding(table, bad), DimensionError);
}

TEST(Dropout, ZeroRateIsIdentityAndMaskIsInverted) {
  std::mt19937_64 rng(1);
  Tensor x = Tensor::full({1000}, 1.0);
  EXPECT_EQ(vals(dropout(x, 0.0, rng)), vals(x));
  auto y = dropout(x, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
}
