#include "convseq/config.hpp"

#include <spdlog/spdlog.h>

#include "convseq/conv.hpp"
#include "convseq/errors.hpp"

namespace convseq {

std::string_view to_string(ConvVariant variant) {
  switch (variant) {
    case ConvVariant::light: return "light";
    case ConvVariant::dynamic: return "dynamic";
    case ConvVariant::dilated: return "dilated";
    case ConvVariant::transformer: return "transformer";
  }
  return "unknown";
}

ConvVariant parse_variant(std::string_view name) {
  if (name == "light") return ConvVariant::light;
  if (name == "dynamic") return ConvVariant::dynamic;
  if (name == "dilated") return ConvVariant::dilated;
  if (name == "transformer" || name == "transformer-baseline") return ConvVariant::transformer;
  throw ContractError("unknown variant '" + std::string(name) + "'");
}

bool is_convolutional(ConvVariant variant) { return variant != ConvVariant::transformer; }

void ModelConfig::validate() const {
  auto fail = [](const char* key, const std::string& why) {
    throw ConfigError(key, std::string(key) + ": " + why);
  };
  if (num_layers < 1) fail("num_layers", "must be at least 1");
  if (d_model < 1) fail("d_model", "must be positive");
  if (d_ff < 1) fail("d_ff", "must be positive");
  if (num_heads < 1 || d_model % num_heads != 0) {
    fail("num_heads", "must divide d_model = " + std::to_string(d_model));
  }
  if (vocab_size < 2) fail("vocab_size", "must be at least 2");
  if (max_target_len < 1) fail("max_target_len", "must be positive");
  if (dropout < 0 || dropout >= 1) fail("dropout", "must be in [0, 1)");
  if (layer_norm_eps <= 0) fail("layer_norm_eps", "must be positive");
  if (is_convolutional(conv_variant)) {
    if (tying_heads < 1 || d_model % tying_heads != 0) {
      fail("tying_heads", "H must divide d_model = " + std::to_string(d_model));
    }
    if (layer_schedule.size() != num_layers) {
      fail("layer_schedule", "has " + std::to_string(layer_schedule.size()) +
                                 " entries for " + std::to_string(num_layers) + " layers");
    }
    for (const auto& e : layer_schedule) {
      if (e.width < 1 || e.dilation < 1) fail("layer_schedule", "widths and dilations must be positive");
    }
  }
}

ModelConfig ModelConfig::base(ConvVariant variant) {
  ModelConfig c;
  c.num_layers = 12;
  c.d_model = 768;
  c.d_ff = 3072;
  c.num_heads = 12;
  c.conv_variant = variant;
  c.tying_heads = 2;
  if (is_convolutional(variant)) c.layer_schedule = make_layer_schedule(variant, c.num_layers);
  return c;
}

ModelConfig ModelConfig::mini(ConvVariant variant) {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.num_heads = 2;
  c.conv_variant = variant;
  c.tying_heads = 2;
  if (is_convolutional(variant)) c.layer_schedule = make_layer_schedule(variant, c.num_layers);
  return c;
}

ModelConfig enable_encoder_cross_attention(ModelConfig config) {
  if (!is_convolutional(config.conv_variant)) {
    spdlog::warn("encoder cross attention ignored: the transformer baseline already attends");
    return config;
  }
  config.encoder_cross_attention = true;
  return config;
}

}  // namespace convseq
