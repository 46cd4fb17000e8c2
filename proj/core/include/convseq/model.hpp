#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "convseq/config.hpp"
#include "convseq/conv.hpp"
#include "convseq/tensor.hpp"

namespace convseq {

// Insertion-ordered map of named trainable tensors.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t total_numel() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-6;
};

struct FeedForwardParams {
  Tensor w1;  // [d x d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff x d]
  Tensor b2;  // [d]
};

// Per-head projections are the column blocks of the [d x d] matrices.
struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;
  std::size_t num_heads = 1;
};

// GLU entry projections, the convolution, and the output projection.
struct ConvBlockParams {
  Tensor w_in, w_gate, w_out;  // [d x d]
  ConvVariant variant = ConvVariant::light;
  TiedKernel tied;                  // light, dilated
  DynamicKernelGenerator generator; // dynamic
};

// Additive mask: 0 where attention is allowed, -inf where it is not.
Tensor causal_mask(std::size_t queries, std::size_t keys);

Tensor glu_conv_block(const Tensor& x, const ConvBlockParams& params, Padding padding);

// LayerNorm(sub(x)) + x. Throws ContractError if sub changes the shape.
Tensor sublayer_wrap(const std::function<Tensor(const Tensor&)>& sub, const Tensor& x,
                     const LayerNormParams& norm);

Tensor ffn(const Tensor& x, const FeedForwardParams& params);

// Concatenated per-head softmax(q k^T / sqrt(d_head) + mask) v, before the
// output projection.
Tensor attention_heads(const Tensor& query, const Tensor& key, const Tensor& value,
                       const AttentionParams& params, const Tensor* mask = nullptr);
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const AttentionParams& params, const Tensor* mask = nullptr);

// Fixed sin/cos position signal [n x d].
Tensor sinusoidal_positions(std::size_t n, std::size_t d);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

struct ParameterCensus {
  std::map<std::string, std::size_t> by_group;  // "embedding", "encoder", ...
  std::size_t total = 0;
  std::size_t positional = 0;  // learned positional parameters
};

// Encoder-decoder with convolutional (or self-attention) token mixing.
class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(ModelConfig config);
  // Layers hold handles into the parameter store, so copies would alias.
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;
  Seq2SeqModel(Seq2SeqModel&&) = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  Tensor encode(std::span<const std::int32_t> source, const ForwardOptions& opts = {}) const;
  // Logits [m x vocab] for decoder inputs of length m (already shifted).
  Tensor decode(const Tensor& encoder_out, std::span<const std::int32_t> decoder_input,
                const ForwardOptions& opts = {}) const;
  // Next-token logits [vocab] after the given target prefix (may be empty).
  Tensor decode_step(const Tensor& encoder_out, std::span<const std::int32_t> prefix) const;
  // Teacher-forced logits [len(target) x vocab].
  Tensor forward(std::span<const std::int32_t> source, std::span<const std::int32_t> target,
                 const ForwardOptions& opts = {}) const;
  std::vector<std::int32_t> greedy_decode(std::span<const std::int32_t> source,
                                          std::size_t max_len, std::int32_t eos_id) const;

  ParameterCensus census() const;
  std::size_t encoder_attention_sublayers() const;
  std::size_t decoder_attention_sublayers() const;

  static constexpr std::int32_t kDecoderStartId = 0;

 private:
  struct EncoderLayer {
    std::optional<ConvBlockParams> conv;
    std::optional<AttentionParams> self_attn;
    LayerNormParams mix_norm;
    FeedForwardParams ffn;
    LayerNormParams ffn_norm;
  };
  struct DecoderLayer {
    std::optional<ConvBlockParams> conv;
    std::optional<AttentionParams> self_attn;
    LayerNormParams mix_norm;
    AttentionParams cross_attn;
    LayerNormParams cross_norm;
    FeedForwardParams ffn;
    LayerNormParams ffn_norm;
  };
  struct TopAttention {
    AttentionParams attn;
    LayerNormParams norm;
  };

  Tensor embed(std::span<const std::int32_t> ids) const;
  Tensor regularize(const Tensor& x, const ForwardOptions& opts) const;
  ConvBlockParams make_conv_block(const std::string& prefix, std::size_t layer, std::mt19937_64& rng);
  AttentionParams make_attention(const std::string& prefix, std::mt19937_64& rng);
  FeedForwardParams make_ffn(const std::string& prefix, std::mt19937_64& rng);
  LayerNormParams make_norm(const std::string& prefix);

  ModelConfig config_;
  ParameterStore params_;
  Tensor embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  std::optional<TopAttention> encoder_top_;
};

// Shift right with the decoder start id: [start, t_0, ..., t_{m-2}].
std::vector<std::int32_t> shift_right(std::span<const std::int32_t> target);

}  // namespace convseq
