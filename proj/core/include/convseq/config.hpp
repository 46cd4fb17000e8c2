#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace convseq {

enum class ConvVariant { light, dynamic, dilated, transformer };

std::string_view to_string(ConvVariant variant);
// Accepts "light", "dynamic", "dilated", "transformer"; throws ContractError
// otherwise.
ConvVariant parse_variant(std::string_view name);
bool is_convolutional(ConvVariant variant);

struct LayerScheduleEntry {
  std::size_t layer = 0;
  std::size_t width = 1;
  std::size_t dilation = 1;

  friend bool operator==(const LayerScheduleEntry&, const LayerScheduleEntry&) = default;
};

struct ModelConfig {
  std::size_t num_layers = 2;  // per stack: encoder and decoder each
  std::size_t d_model = 8;
  std::size_t d_ff = 16;
  std::size_t num_heads = 2;
  std::size_t vocab_size = 358;
  ConvVariant conv_variant = ConvVariant::light;
  std::size_t tying_heads = 2;  // H: unique kernel rows
  std::vector<LayerScheduleEntry> layer_schedule;
  bool encoder_cross_attention = false;
  std::size_t max_target_len = 512;
  double dropout = 0.0;
  double layer_norm_eps = 1e-6;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // 12 layers, 768 / 3072, 12 heads, window 7, H = 2.
  static ModelConfig base(ConvVariant variant = ConvVariant::light);
  // 2 layers, 8 / 16, 2 heads. Used by the test suites.
  static ModelConfig mini(ConvVariant variant = ConvVariant::light);
};

// Returns the config with a single encoder self-attention layer added on top
// of the convolutional encoder. No-op (with a warning) for the transformer
// baseline.
ModelConfig enable_encoder_cross_attention(ModelConfig config);

}  // namespace convseq
