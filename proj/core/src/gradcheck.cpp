#include "convseq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "convseq/conv.hpp"
#include "convseq/errors.hpp"
#include "convseq/loss.hpp"
#include "convseq/model.hpp"
#include "convseq/ops.hpp"

namespace convseq {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss,
                                std::vector<Tensor> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  const Tensor l = loss();
  if (l.numel() != 1) throw ContractError("gradcheck " + name + ": loss is not a scalar");
  backward(l);

  GradCheckResult result;
  result.name = name;
  std::mt19937_64 rng(options.seed);
  for (auto& in : inputs) {
    const auto analytic = in.grad();
    std::vector<std::size_t> entries(in.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
    }
    auto values = in.mutable_values();
    for (std::size_t e : entries) {
      const double saved = values[e];
      values[e] = saved + options.step;
      const double plus = loss().item();
      values[e] = saved - options.step;
      const double minus = loss().item();
      values[e] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      result.max_rel_error =
          std::max(result.max_rel_error, relative_error(analytic[e], numeric, options.floor));
      ++result.entries;
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from zero, for ops with a kink there.
Tensor off_zero_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.mutable_values()) x = sign(rng) ? x : -x;
  return t;
}

// Contracts an op's output with a fixed random weight so every output entry
// carries a distinct upstream gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

ModelConfig gradcheck_model_config(ConvVariant variant) {
  ModelConfig c = ModelConfig::mini(variant);
  c.vocab_size = 11;
  c.max_target_len = 16;
  return c;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(options.seed);
  auto run = [&](const std::string& name, const std::function<Tensor()>& f,
                 std::vector<Tensor> inputs) {
    out.push_back(check_gradients(name, f, std::move(inputs), options));
  };

  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    run("matmul", [=] { return probe(matmul(a, b), 1); }, {a, b});
    Tensor c = random_tensor({5, 4}, rng);
    run("matmul_nt", [=] { return probe(matmul_nt(a, c), 2); }, {a, c});
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    run("add", [=] { return probe(add(a, b), 3); }, {a, b});
    run("sub", [=] { return probe(sub(a, b), 4); }, {a, b});
    run("mul", [=] { return probe(mul(a, b), 5); }, {a, b});
    run("scale", [=] { return probe(scale(a, -1.7), 6); }, {a});
    Tensor v = random_tensor({4}, rng);
    run("add_row_vector", [=] { return probe(add_row_vector(a, v), 7); }, {a, v});
    run("sigmoid", [=] { return probe(sigmoid(scale(a, 3.0)), 8); }, {a});
    Tensor k = off_zero_tensor({3, 4}, rng);
    run("relu", [=] { return probe(relu(k), 9); }, {k});
    run("softmax_axis0", [=] { return probe(softmax(a, 0), 10); }, {a});
    run("softmax_axis1", [=] { return probe(softmax(a, 1), 11); }, {a});
    run("sum", [=] { return scale(sum(mul(a, a)), 0.5); }, {a});
    run("mean", [=] { return mean(mul(a, b)); }, {a, b});
    run("slice_cols", [=] { return probe(slice_cols(a, 1, 2), 12); }, {a});
    run("concat_cols", [=] { return probe(concat_cols({a, b, a}), 13); }, {a, b});
    run("reshape", [=] { return probe(reshape(a, {2, 6}), 14); }, {a});
    run("dropout", [=] {
      std::mt19937_64 mask_rng(99);
      return probe(dropout(a, 0.3, mask_rng), 15);
    }, {a});
  }
  {
    Tensor x = random_tensor({4, 6}, rng, -2.0, 2.0);
    Tensor gamma = random_tensor({6}, rng, 0.5, 1.5), beta = random_tensor({6}, rng);
    run("layer_norm", [=] { return probe(layer_norm(x, gamma, beta, 1e-6), 16); }, {x, gamma, beta});
  }
  {
    Tensor table = random_tensor({7, 3}, rng);
    const std::vector<std::int32_t> ids{1, 4, 4, 0, 6};
    run("embedding", [=] { return probe(embedding(table, ids), 17); }, {table});
  }
  {
    Tensor logits = random_tensor({5, 7}, rng, -2.0, 2.0);
    const std::vector<std::int32_t> targets{0, 3, 6, 2, 2};
    const std::vector<std::uint8_t> mask{0, 0, 1, 0, 0};
    run("seq_cross_entropy", [=] { return seq_cross_entropy(logits, targets, mask); }, {logits});
  }

  // Convolutions, both paddings, with dilation.
  for (const Padding padding : {Padding::same_zero, Padding::causal_left}) {
    const std::string tag = padding == Padding::same_zero ? "same" : "causal";
    Tensor x = random_tensor({9, 4}, rng);
    DepthwiseKernel dw{random_tensor({4, 3}, rng), 2};
    run("depthwise_conv_" + tag, [=] { return probe(depthwise_conv(x, dw, padding), 20); },
        {x, dw.weight});
    TiedKernel tied{random_tensor({2, 5}, rng), 1};
    run("lightweight_conv_" + tag, [=] { return probe(lightweight_conv(x, tied, padding), 21); },
        {x, tied.weight});
    Tensor kernels = random_tensor({2, 3}, rng);
    run("tied_conv_" + tag, [=] { return probe(tied_conv(x, kernels, 2, padding), 22); },
        {x, kernels});
    Tensor positional = random_tensor({9, 2, 3}, rng);
    run("positional_conv_" + tag,
        [=] { return probe(positional_conv(x, positional, 1, padding), 23); }, {x, positional});
    DynamicKernelGenerator gen{random_tensor({4, 2 * 3}, rng), 2, 3, 2};
    run("dynamic_conv_" + tag, [=] { return probe(dynamic_conv(x, gen, padding), 24); },
        {x, gen.projection});
  }

  // Composite sublayers.
  {
    Tensor x = random_tensor({6, 4}, rng);
    ConvBlockParams block;
    block.w_in = random_tensor({4, 4}, rng);
    block.w_gate = random_tensor({4, 4}, rng);
    block.w_out = random_tensor({4, 4}, rng);
    block.tied = TiedKernel{random_tensor({2, 3}, rng), 1};
    run("glu_conv_block",
        [=] { return probe(glu_conv_block(x, block, Padding::causal_left), 30); },
        {x, block.w_in, block.w_gate, block.w_out, block.tied.weight});
    FeedForwardParams f{random_tensor({4, 5}, rng), random_tensor({5}, rng, 0.3, 0.6),
                        random_tensor({5, 4}, rng), random_tensor({4}, rng)};
    run("ffn", [=] { return probe(ffn(x, f), 31); }, {x, f.w1, f.b1, f.w2, f.b2});
    AttentionParams attn{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
                         random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), 2};
    Tensor memory = random_tensor({5, 4}, rng);
    const Tensor mask = causal_mask(6, 6);
    run("self_attention_causal",
        [=] { return probe(multi_head_attention(x, x, x, attn, &mask), 32); },
        {x, attn.w_q, attn.w_k, attn.w_v, attn.w_o});
    run("cross_attention",
        [=] { return probe(multi_head_attention(x, memory, memory, attn), 33); },
        {x, memory, attn.w_q, attn.w_k, attn.w_v, attn.w_o});
    LayerNormParams norm{random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng), 1e-6};
    run("sublayer_wrap",
        [=] { return probe(sublayer_wrap([&](const Tensor& in) { return ffn(in, f); }, x, norm), 34); },
        {x, norm.gamma, norm.beta, f.w1});
  }

  // Whole miniature models. Conv kernels start at zero, so perturb every
  // parameter to avoid checking only a symmetric point.
  const std::vector<std::int32_t> source{3, 7, 2, 9, 5, 5, 10};
  const std::vector<std::int32_t> target{4, 1, 8, 6, 2};
  struct ModelCase {
    std::string name;
    ModelConfig config;
  };
  std::vector<ModelCase> cases{
      {"model_light", gradcheck_model_config(ConvVariant::light)},
      {"model_dynamic", gradcheck_model_config(ConvVariant::dynamic)},
      {"model_dilated", gradcheck_model_config(ConvVariant::dilated)},
      {"model_transformer", gradcheck_model_config(ConvVariant::transformer)},
      {"model_light_encoder_cross_attn",
       enable_encoder_cross_attention(gradcheck_model_config(ConvVariant::light))},
  };
  for (auto& c : cases) {
    auto model = std::make_shared<Seq2SeqModel>(c.config);
    std::vector<Tensor> params;
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (const auto& [_, t] : model->parameters().items()) {
      Tensor p = t;
      for (auto& v : p.mutable_values()) v += jitter(rng);
      params.push_back(p);
    }
    run(c.name, [=] { return seq_cross_entropy(model->forward(source, target), target); }, params);
  }
  return out;
}

}  // namespace convseq
