#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convseq/config.hpp"
#include "convseq/model.hpp"
#include "convseq/optim.hpp"

namespace convseq {

nlohmann::json config_to_json(const ModelConfig& config);
// Throws ConfigError naming the first missing or malformed key.
ModelConfig config_from_json(const nlohmann::json& j);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Binary layout, all integers and doubles little-endian:
//   "CVSQCKPT" | u32 version | u64 len + config JSON text | u64 step
//   | u32 count + parameter arrays | u32 count + optimizer arrays
// Each array is u32 len + name, u32 rank, u64 dims[rank], f64 values.
// Optimizer arrays are named "<param>:row", "<param>:col" or "<param>:full"
// plus a scalar "adafactor:step".
struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> optimizer;
};

Checkpoint make_checkpoint(const Seq2SeqModel& model, const OptimizerState* optimizer,
                           std::uint64_t step);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies parameter values into a model built from the same config.
void restore_parameters(Seq2SeqModel& model, const Checkpoint& checkpoint);
// Rebuilds optimizer state; returns a fresh state when the checkpoint has none.
OptimizerState restore_optimizer(const Seq2SeqModel& model, const Checkpoint& checkpoint);

}  // namespace convseq
