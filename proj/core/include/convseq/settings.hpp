#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "convseq/bench.hpp"
#include "convseq/config.hpp"
#include "convseq/train.hpp"

namespace convseq {

// Flat "section.key" settings read from an INI file. Every key has a schema
// entry (type and default); unknown keys and malformed values are rejected
// with a ConfigError naming the key.
//
//   [model]     architecture (num_layers, d_model, conv_variant, ...)
//   [pretrain]  corpus, steps, batch_size, lr_mode, ...
//   [finetune]  task, train, validation, steps, lr, lr_grid, ...
//   [eval]      task, data
//   [benchmark] variants, grid, timing, batch, reps, ...
//   [gradcheck] step, tolerance
//   [corrupt]   span_len, rate, granularity
class Settings {
 public:
  // Paper-scale defaults for every key.
  Settings();

  static Settings load(const std::filesystem::path& path);

  // "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  // Seed for every command; overrides model.seed and the run seeds.
  void set_seed(std::uint64_t seed);

  ModelConfig model_config() const;
  RunConfig pretrain_run() const;
  RunConfig finetune_run() const;
  ScalingOptions scaling_options() const;

  // The effective settings, in a form load() reads back.
  std::string to_ini() const;
  void save(const std::filesystem::path& path) const;

  static std::vector<std::string> known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace convseq
