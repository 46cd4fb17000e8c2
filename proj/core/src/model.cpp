#include "convseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "convseq/errors.hpp"
#include "convseq/ops.hpp"

namespace convseq {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  index_.emplace(name, items_.size());
  items_.emplace_back(name, value);
  return value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return items_[it->second].second;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

Tensor causal_mask(std::size_t queries, std::size_t keys) {
  std::vector<double> m(queries * keys, 0.0);
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = i + 1; j < keys; ++j) m[i * keys + j] = -std::numeric_limits<double>::infinity();
  }
  return Tensor({queries, keys}, std::move(m));
}

Tensor glu_conv_block(const Tensor& x, const ConvBlockParams& p, Padding padding) {
  if (x.rank() != 2 || x.dim(1) != p.w_in.dim(0)) {
    throw DimensionError("glu_conv_block: input " + shape_string(x.shape()) +
                         " does not match projection " + shape_string(p.w_in.shape()));
  }
  const Tensor gated = mul(matmul(x, p.w_in), sigmoid(matmul(x, p.w_gate)));
  Tensor mixed;
  switch (p.variant) {
    case ConvVariant::light:
    case ConvVariant::dilated:
      mixed = lightweight_conv(gated, p.tied, padding);
      break;
    case ConvVariant::dynamic:
      mixed = dynamic_conv(gated, p.generator, padding);
      break;
    case ConvVariant::transformer:
      throw ContractError("glu_conv_block: the transformer baseline has no convolution");
  }
  return matmul(mixed, p.w_out);
}

Tensor sublayer_wrap(const std::function<Tensor(const Tensor&)>& sub, const Tensor& x,
                     const LayerNormParams& norm) {
  const Tensor y = sub(x);
  if (y.shape() != x.shape()) {
    throw ContractError("sublayer changed shape " + shape_string(x.shape()) + " -> " +
                        shape_string(y.shape()));
  }
  return add(layer_norm(y, norm.gamma, norm.beta, norm.eps), x);
}

Tensor ffn(const Tensor& x, const FeedForwardParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.w1.dim(0)) {
    throw DimensionError("ffn: input " + shape_string(x.shape()) + " does not match " +
                         shape_string(p.w1.shape()));
  }
  const Tensor hidden = relu(add_row_vector(matmul(x, p.w1), p.b1));
  return add_row_vector(matmul(hidden, p.w2), p.b2);
}

Tensor attention_heads(const Tensor& query, const Tensor& key, const Tensor& value,
                       const AttentionParams& p, const Tensor* mask) {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2) {
    throw DimensionError("attention: inputs must be matrices");
  }
  if (key.dim(0) != value.dim(0)) {
    throw DimensionError("attention: key length " + std::to_string(key.dim(0)) +
                         " differs from value length " + std::to_string(value.dim(0)));
  }
  if (mask && mask->shape() != Shape{query.dim(0), key.dim(0)}) {
    throw DimensionError("attention: mask " + shape_string(mask->shape()) + " should be [" +
                         std::to_string(query.dim(0)) + "x" + std::to_string(key.dim(0)) + "]");
  }
  const std::size_t d = p.w_q.dim(1);
  if (p.num_heads == 0 || d % p.num_heads != 0) {
    throw ContractError("attention: head count must divide the model width");
  }
  const std::size_t d_head = d / p.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  const Tensor q = matmul(query, p.w_q);
  const Tensor k = matmul(key, p.w_k);
  const Tensor v = matmul(value, p.w_v);
  if (p.num_heads == 1) {
    Tensor scores = scale(matmul_nt(q, k), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    return matmul(softmax(scores, 1), v);
  }
  std::vector<Tensor> heads;
  heads.reserve(p.num_heads);
  for (std::size_t h = 0; h < p.num_heads; ++h) {
    const Tensor qh = slice_cols(q, h * d_head, d_head);
    const Tensor kh = slice_cols(k, h * d_head, d_head);
    const Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return concat_cols(heads);
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const AttentionParams& p, const Tensor* mask) {
  return matmul(attention_heads(query, key, value, p, mask), p.w_o);
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({n, d}, std::move(pe));
}

std::vector<std::int32_t> shift_right(std::span<const std::int32_t> target) {
  std::vector<std::int32_t> out;
  out.reserve(target.size());
  out.push_back(Seq2SeqModel::kDecoderStartId);
  if (!target.empty()) out.insert(out.end(), target.begin(), target.end() - 1);
  return out;
}

namespace {

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor fan_in_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace

LayerNormParams Seq2SeqModel::make_norm(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  return {params_.add(prefix + ".gamma", Tensor::full({d}, 1.0)),
          params_.add(prefix + ".beta", Tensor::zeros({d})), config_.layer_norm_eps};
}

FeedForwardParams Seq2SeqModel::make_ffn(const std::string& prefix, std::mt19937_64& rng) {
  const std::size_t d = config_.d_model, f = config_.d_ff;
  FeedForwardParams p;
  p.w1 = params_.add(prefix + ".w1", fan_in_uniform(d, f, rng));
  p.b1 = params_.add(prefix + ".b1", Tensor::zeros({f}));
  p.w2 = params_.add(prefix + ".w2", fan_in_uniform(f, d, rng));
  p.b2 = params_.add(prefix + ".b2", Tensor::zeros({d}));
  return p;
}

AttentionParams Seq2SeqModel::make_attention(const std::string& prefix, std::mt19937_64& rng) {
  const std::size_t d = config_.d_model;
  AttentionParams p;
  p.w_q = params_.add(prefix + ".w_q", fan_in_uniform(d, d, rng));
  p.w_k = params_.add(prefix + ".w_k", fan_in_uniform(d, d, rng));
  p.w_v = params_.add(prefix + ".w_v", fan_in_uniform(d, d, rng));
  p.w_o = params_.add(prefix + ".w_o", fan_in_uniform(d, d, rng));
  p.num_heads = config_.num_heads;
  return p;
}

ConvBlockParams Seq2SeqModel::make_conv_block(const std::string& prefix, std::size_t layer,
                                              std::mt19937_64& rng) {
  const std::size_t d = config_.d_model, heads = config_.tying_heads;
  const auto& entry = config_.layer_schedule.at(layer);
  ConvBlockParams p;
  p.variant = config_.conv_variant;
  p.w_in = params_.add(prefix + ".w_in", fan_in_uniform(d, d, rng));
  p.w_gate = params_.add(prefix + ".w_gate", fan_in_uniform(d, d, rng));
  p.w_out = params_.add(prefix + ".w_out", fan_in_uniform(d, d, rng));
  // Zero logits: every kernel starts as a uniform moving average.
  if (p.variant == ConvVariant::dynamic) {
    p.generator.projection = params_.add(prefix + ".kernel_proj", Tensor::zeros({d, heads * entry.width}));
    p.generator.heads = heads;
    p.generator.width = entry.width;
    p.generator.dilation = entry.dilation;
  } else {
    p.tied.weight = params_.add(prefix + ".kernel", Tensor::zeros({heads, entry.width}));
    p.tied.dilation = entry.dilation;
  }
  return p;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.d_model;
  const bool conv = is_convolutional(config_.conv_variant);

  embedding_ = params_.add("embedding", uniform({config_.vocab_size, d},
                                                1.0 / std::sqrt(static_cast<double>(d)), rng));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string prefix = "encoder." + std::to_string(l);
    EncoderLayer layer;
    if (conv) {
      layer.conv = make_conv_block(prefix + ".conv", l, rng);
    } else {
      layer.self_attn = make_attention(prefix + ".self_attn", rng);
    }
    layer.mix_norm = make_norm(prefix + ".mix_norm");
    layer.ffn = make_ffn(prefix + ".ffn", rng);
    layer.ffn_norm = make_norm(prefix + ".ffn_norm");
    encoder_.push_back(std::move(layer));
  }
  if (conv && config_.encoder_cross_attention) {
    TopAttention top;
    top.attn = make_attention("encoder.cross_attn", rng);
    top.norm = make_norm("encoder.cross_attn_norm");
    encoder_top_ = std::move(top);
  }
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string prefix = "decoder." + std::to_string(l);
    DecoderLayer layer;
    if (conv) {
      layer.conv = make_conv_block(prefix + ".conv", l, rng);
    } else {
      layer.self_attn = make_attention(prefix + ".self_attn", rng);
    }
    layer.mix_norm = make_norm(prefix + ".mix_norm");
    layer.cross_attn = make_attention(prefix + ".enc_dec_attn", rng);
    layer.cross_norm = make_norm(prefix + ".enc_dec_norm");
    layer.ffn = make_ffn(prefix + ".ffn", rng);
    layer.ffn_norm = make_norm(prefix + ".ffn_norm");
    decoder_.push_back(std::move(layer));
  }
}

Tensor Seq2SeqModel::embed(std::span<const std::int32_t> ids) const {
  Tensor x = scale(embedding(embedding_, ids), std::sqrt(static_cast<double>(config_.d_model)));
  if (!is_convolutional(config_.conv_variant)) {
    x = add(x, sinusoidal_positions(ids.size(), config_.d_model));
  }
  return x;
}

Tensor Seq2SeqModel::regularize(const Tensor& x, const ForwardOptions& opts) const {
  if (!opts.training || config_.dropout == 0.0) return x;
  if (!opts.rng) throw ContractError("dropout during training needs a random generator");
  return dropout(x, config_.dropout, *opts.rng);
}

Tensor Seq2SeqModel::encode(std::span<const std::int32_t> source, const ForwardOptions& opts) const {
  if (source.empty()) throw ContractError("encode: empty source sequence");
  Tensor x = embed(source);
  for (const auto& layer : encoder_) {
    x = sublayer_wrap(
        [&](const Tensor& in) {
          const Tensor y = layer.conv ? glu_conv_block(in, *layer.conv, Padding::same_zero)
                                      : multi_head_attention(in, in, in, *layer.self_attn);
          return regularize(y, opts);
        },
        x, layer.mix_norm);
    x = sublayer_wrap([&](const Tensor& in) { return regularize(ffn(in, layer.ffn), opts); }, x,
                      layer.ffn_norm);
  }
  if (encoder_top_) {
    x = sublayer_wrap(
        [&](const Tensor& in) {
          return regularize(multi_head_attention(in, in, in, encoder_top_->attn), opts);
        },
        x, encoder_top_->norm);
  }
  return x;
}

Tensor Seq2SeqModel::decode(const Tensor& encoder_out, std::span<const std::int32_t> decoder_input,
                            const ForwardOptions& opts) const {
  if (decoder_input.empty()) throw ContractError("decode: empty decoder input");
  if (decoder_input.size() > config_.max_target_len) {
    throw ContractError("decode: target length " + std::to_string(decoder_input.size()) +
                        " exceeds max_target_len " + std::to_string(config_.max_target_len));
  }
  const std::size_t m = decoder_input.size();
  Tensor x = embed(decoder_input);
  const bool conv = is_convolutional(config_.conv_variant);
  const Tensor mask = conv ? Tensor() : causal_mask(m, m);
  for (const auto& layer : decoder_) {
    x = sublayer_wrap(
        [&](const Tensor& in) {
          const Tensor y = layer.conv ? glu_conv_block(in, *layer.conv, Padding::causal_left)
                                      : multi_head_attention(in, in, in, *layer.self_attn, &mask);
          return regularize(y, opts);
        },
        x, layer.mix_norm);
    x = sublayer_wrap(
        [&](const Tensor& in) {
          return regularize(multi_head_attention(in, encoder_out, encoder_out, layer.cross_attn),
                            opts);
        },
        x, layer.cross_norm);
    x = sublayer_wrap([&](const Tensor& in) { return regularize(ffn(in, layer.ffn), opts); }, x,
                      layer.ffn_norm);
  }
  return matmul_nt(x, embedding_);
}

Tensor Seq2SeqModel::forward(std::span<const std::int32_t> source,
                             std::span<const std::int32_t> target, const ForwardOptions& opts) const {
  if (target.empty()) throw ContractError("forward: empty target sequence");
  const auto decoder_input = shift_right(target);
  return decode(encode(source, opts), decoder_input, opts);
}

Tensor Seq2SeqModel::decode_step(const Tensor& encoder_out,
                                 std::span<const std::int32_t> prefix) const {
  std::vector<std::int32_t> input;
  input.reserve(prefix.size() + 1);
  input.push_back(kDecoderStartId);
  input.insert(input.end(), prefix.begin(), prefix.end());
  const Tensor logits = decode(encoder_out.detach(), input);
  const std::size_t vocab = logits.dim(1);
  const auto last = logits.values().subspan((logits.dim(0) - 1) * vocab, vocab);
  return Tensor({vocab}, std::vector<double>(last.begin(), last.end()));
}

std::vector<std::int32_t> Seq2SeqModel::greedy_decode(std::span<const std::int32_t> source,
                                                      std::size_t max_len,
                                                      std::int32_t eos_id) const {
  const Tensor enc = encode(source).detach();
  std::vector<std::int32_t> out;
  const std::size_t limit = std::min(max_len, config_.max_target_len - 1);
  while (out.size() < limit) {
    const Tensor logits = decode_step(enc, out);
    const auto v = logits.values();
    const auto best = static_cast<std::int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (best == eos_id) break;
    out.push_back(best);
  }
  return out;
}

ParameterCensus Seq2SeqModel::census() const {
  ParameterCensus c;
  for (const auto& [name, t] : params_.items()) {
    c.by_group[name.substr(0, name.find('.'))] += t.numel();
    c.total += t.numel();
    if (name.find("position") != std::string::npos) c.positional += t.numel();
  }
  return c;
}

std::size_t Seq2SeqModel::encoder_attention_sublayers() const {
  std::size_t n = encoder_top_ ? 1 : 0;
  for (const auto& layer : encoder_) n += layer.self_attn ? 1 : 0;
  return n;
}

std::size_t Seq2SeqModel::decoder_attention_sublayers() const {
  std::size_t n = 0;
  for (const auto& layer : decoder_) n += (layer.self_attn ? 1 : 0) + 1;
  return n;
}

}  // namespace convseq
