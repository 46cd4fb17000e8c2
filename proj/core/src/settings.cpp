#include "convseq/settings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "convseq/conv.hpp"
#include "convseq/errors.hpp"

namespace convseq {

namespace {

enum class Kind { uint, real, boolean, text, variant, uint_list, text_list, choice };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
  const char* choices = "";  // "|"-separated, for Kind::choice
};

// Paper-scale defaults. The desk-scale runs override model.* via mini.ini.
const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s{
      {"run.seed", Kind::uint, "1"},

      {"model.num_layers", Kind::uint, "12"},
      {"model.d_model", Kind::uint, "768"},
      {"model.d_ff", Kind::uint, "3072"},
      {"model.num_heads", Kind::uint, "12"},
      {"model.vocab_size", Kind::uint, "358"},
      {"model.conv_variant", Kind::variant, "light"},
      {"model.tying_heads", Kind::uint, "2"},
      {"model.kernel_width", Kind::uint, "7"},
      {"model.dilation", Kind::uint, "1"},
      {"model.layer_widths", Kind::uint_list, ""},
      {"model.encoder_cross_attention", Kind::boolean, "false"},
      {"model.max_target_len", Kind::uint, "512"},
      {"model.dropout", Kind::real, "0"},
      {"model.layer_norm_eps", Kind::real, "1e-6"},

      {"pretrain.corpus", Kind::text, "data/corpus.txt"},
      {"pretrain.steps", Kind::uint, "524288"},
      {"pretrain.batch_size", Kind::uint, "128"},
      {"pretrain.sequence_length", Kind::uint, "512"},
      {"pretrain.lr_mode", Kind::choice, "inverse_sqrt", "inverse_sqrt|constant"},
      {"pretrain.lr", Kind::real, "0.001"},
      {"pretrain.warmup", Kind::uint, "10000"},
      {"pretrain.eval_every", Kind::uint, "100"},
      {"pretrain.checkpoint_every", Kind::uint, "0"},
      {"pretrain.span_len", Kind::uint, "3"},
      {"pretrain.corruption_rate", Kind::real, "0.15"},

      {"finetune.task", Kind::text, "sentiment"},
      {"finetune.train", Kind::text, "data/sentiment.tsv"},
      {"finetune.validation", Kind::text, ""},
      {"finetune.checkpoint", Kind::text, ""},
      {"finetune.steps", Kind::uint, "1000"},
      {"finetune.batch_size", Kind::uint, "32"},
      {"finetune.lr", Kind::real, "0.001"},
      {"finetune.lr_grid", Kind::boolean, "true"},
      {"finetune.lr_search", Kind::boolean, "false"},
      {"finetune.eval_every", Kind::uint, "50"},

      {"eval.task", Kind::text, "sentiment"},
      {"eval.data", Kind::text, "data/sentiment.tsv"},
      {"eval.checkpoint", Kind::text, ""},

      {"benchmark.variants", Kind::text_list, "light,dynamic,dilated,transformer"},
      {"benchmark.grid", Kind::uint_list, "64,128,256,512,1024,2048,4096"},
      {"benchmark.timing", Kind::boolean, "true"},
      {"benchmark.batch", Kind::uint, "1"},
      {"benchmark.reps", Kind::uint, "5"},
      {"benchmark.warmup", Kind::uint, "3"},
      {"benchmark.memory_budget_mb", Kind::uint, "2048"},
      {"benchmark.tail_min_n", Kind::uint, "1024"},
      {"benchmark.span_len", Kind::uint, "3"},
      {"benchmark.corruption_rate", Kind::real, "0.15"},

      {"gradcheck.step", Kind::real, "1e-5"},
      {"gradcheck.tolerance", Kind::real, "1e-4"},

      {"corrupt.input", Kind::text, ""},
      {"corrupt.span_len", Kind::uint, "3"},
      {"corrupt.rate", Kind::real, "0.15"},
      {"corrupt.granularity", Kind::choice, "byte", "byte|word"},
  };
  return s;
}

const KeySpec& spec_for(const std::string& key) {
  for (const auto& s : schema()) {
    if (key == s.key) return s;
  }
  throw ConfigError(key, "unknown setting '" + key + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  if (boost::algorithm::trim_copy(value).empty()) return parts;
  boost::algorithm::split(parts, value, boost::algorithm::is_any_of(","));
  for (auto& p : parts) boost::algorithm::trim(p);
  return parts;
}

bool parse_uint(const std::string& s, std::uint64_t& out) {
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end && !s.empty();
}

bool parse_real(const std::string& s, double& out) {
  std::istringstream in(s);
  in >> out;
  return !s.empty() && in && in.peek() == std::char_traits<char>::eof() && std::isfinite(out);
}

std::string normalize(const KeySpec& spec, const std::string& raw) {
  const std::string v = boost::algorithm::trim_copy(raw);
  auto bad = [&](const std::string& what) -> ConfigError {
    return ConfigError(spec.key, std::string(spec.key) + ": " + what + ", got '" + v + "'");
  };
  switch (spec.kind) {
    case Kind::uint: {
      std::uint64_t x;
      if (!parse_uint(v, x)) throw bad("expected a nonnegative integer");
      return v;
    }
    case Kind::real: {
      double x;
      if (!parse_real(v, x)) throw bad("expected a finite number");
      return v;
    }
    case Kind::boolean: {
      const std::string l = boost::algorithm::to_lower_copy(v);
      if (l == "true" || l == "1" || l == "yes" || l == "on") return "true";
      if (l == "false" || l == "0" || l == "no" || l == "off") return "false";
      throw bad("expected true or false");
    }
    case Kind::text:
      return v;
    case Kind::variant:
      try {
        return std::string(to_string(parse_variant(v)));
      } catch (const ContractError&) {
        throw bad("expected light, dynamic, dilated or transformer");
      }
    case Kind::uint_list:
      for (const auto& p : split_list(v)) {
        std::uint64_t x;
        if (!parse_uint(p, x)) throw bad("expected a comma-separated list of integers");
      }
      return v;
    case Kind::text_list:
      return v;
    case Kind::choice: {
      std::vector<std::string> options;
      boost::algorithm::split(options, spec.choices, boost::algorithm::is_any_of("|"));
      if (std::find(options.begin(), options.end(), v) == options.end()) {
        throw bad(std::string("expected one of ") + boost::algorithm::replace_all_copy(
                                                         std::string(spec.choices), "|", ", "));
      }
      return v;
    }
  }
  return v;
}

// Re-throws model validation errors with the settings key.
template <typename F>
auto with_section(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (e.key().find('.') != std::string::npos) throw;
    throw ConfigError(section + "." + e.key(), section + "." + e.what());
  }
}

}  // namespace

Settings::Settings() {
  for (const auto& s : schema()) values_[s.key] = s.fallback;
}

Settings Settings::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config", "config file not found: " + path.string());
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config", "cannot parse " + path.string() + ": " + e.what());
  }
  Settings settings;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(section, "setting '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) settings.set(section + "." + key, value.data());
  }
  return settings;
}

void Settings::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override '" + assignment + "' is not of the form section.key=value");
  }
  set(boost::algorithm::trim_copy(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void Settings::set(const std::string& key, const std::string& value) {
  values_[key] = normalize(spec_for(key), value);
}

const std::string& Settings::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown setting '" + key + "'");
  return it->second;
}

std::uint64_t Settings::get_uint(const std::string& key) const {
  std::uint64_t x = 0;
  parse_uint(get(key), x);
  return x;
}

std::int64_t Settings::get_int(const std::string& key) const {
  return static_cast<std::int64_t>(get_uint(key));
}

double Settings::get_double(const std::string& key) const {
  double x = 0;
  parse_real(get(key), x);
  return x;
}

bool Settings::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<std::string> Settings::get_list(const std::string& key) const {
  return split_list(get(key));
}

void Settings::set_seed(std::uint64_t seed) { set("run.seed", std::to_string(seed)); }

ModelConfig Settings::model_config() const {
  return with_section("model", [&] {
    ModelConfig c;
    c.num_layers = get_uint("model.num_layers");
    c.d_model = get_uint("model.d_model");
    c.d_ff = get_uint("model.d_ff");
    c.num_heads = get_uint("model.num_heads");
    c.vocab_size = get_uint("model.vocab_size");
    c.conv_variant = parse_variant(get("model.conv_variant"));
    c.tying_heads = get_uint("model.tying_heads");
    c.encoder_cross_attention = get_bool("model.encoder_cross_attention");
    c.max_target_len = get_uint("model.max_target_len");
    c.dropout = get_double("model.dropout");
    c.layer_norm_eps = get_double("model.layer_norm_eps");
    c.seed = get_uint("run.seed");
    if (is_convolutional(c.conv_variant)) {
      const auto dilation = get_uint("model.dilation");
      if (dilation < 1) throw ConfigError("model.dilation", "model.dilation: must be at least 1");
      if (c.num_layers < 1) throw ConfigError("model.num_layers", "model.num_layers: must be at least 1");
      const auto widths = get_list("model.layer_widths");
      if (!widths.empty()) {
        if (widths.size() != c.num_layers) {
          throw ConfigError("model.layer_widths", "model.layer_widths: needs one width per layer (" +
                                                      std::to_string(c.num_layers) + ")");
        }
        for (std::size_t l = 0; l < widths.size(); ++l) {
          c.layer_schedule.push_back({l, std::stoul(widths[l]), dilation});
        }
      } else if (c.conv_variant == ConvVariant::dilated) {
        c.layer_schedule = make_layer_schedule(c.conv_variant, c.num_layers, dilation);
      } else {
        const auto k = get_uint("model.kernel_width");
        for (std::size_t l = 0; l < c.num_layers; ++l) c.layer_schedule.push_back({l, k, dilation});
      }
    }
    c.validate();
    return c;
  });
}

RunConfig Settings::pretrain_run() const {
  return with_section("pretrain", [&] {
    RunConfig r;
    r.steps = get_uint("pretrain.steps");
    r.batch_size = get_uint("pretrain.batch_size");
    r.sequence_length = get_uint("pretrain.sequence_length");
    r.lr.mode = get("pretrain.lr_mode") == "constant" ? LrMode::constant : LrMode::inverse_sqrt;
    r.lr.constant = get_double("pretrain.lr");
    r.lr.warmup = get_uint("pretrain.warmup");
    r.eval_every = get_uint("pretrain.eval_every");
    r.checkpoint_every = get_uint("pretrain.checkpoint_every");
    r.seed = get_uint("run.seed");
    r.span_len = get_uint("pretrain.span_len");
    r.corruption_rate = get_double("pretrain.corruption_rate");
    r.validate();
    return r;
  });
}

RunConfig Settings::finetune_run() const {
  return with_section("finetune", [&] {
    RunConfig r;
    r.steps = get_uint("finetune.steps");
    r.batch_size = get_uint("finetune.batch_size");
    r.lr.mode = LrMode::constant;
    r.lr.constant = get_double("finetune.lr");
    r.paper_lr_grid = get_bool("finetune.lr_grid");
    r.eval_every = get_uint("finetune.eval_every");
    r.seed = get_uint("run.seed");
    r.validate();
    return r;
  });
}

ScalingOptions Settings::scaling_options() const {
  ScalingOptions o;
  o.grid.clear();
  for (const auto& g : get_list("benchmark.grid")) o.grid.push_back(std::stoul(g));
  if (o.grid.empty()) throw ConfigError("benchmark.grid", "benchmark.grid: must not be empty");
  if (std::find(o.grid.begin(), o.grid.end(), 0u) != o.grid.end()) {
    throw ConfigError("benchmark.grid", "benchmark.grid: lengths must be positive");
  }
  o.timing = get_bool("benchmark.timing");
  o.tail_min_n = get_uint("benchmark.tail_min_n");
  o.throughput.batch = get_uint("benchmark.batch");
  o.throughput.reps = get_uint("benchmark.reps");
  o.throughput.warmup = get_uint("benchmark.warmup");
  o.throughput.memory_budget_bytes = get_uint("benchmark.memory_budget_mb") << 20;
  o.throughput.geometry.span_len = get_uint("benchmark.span_len");
  o.throughput.geometry.corruption_rate = get_double("benchmark.corruption_rate");
  o.throughput.seed = get_uint("run.seed");
  if (o.throughput.batch < 1) throw ConfigError("benchmark.batch", "benchmark.batch: must be positive");
  if (o.throughput.reps < 1) throw ConfigError("benchmark.reps", "benchmark.reps: must be positive");
  if (o.throughput.geometry.span_len < 1) {
    throw ConfigError("benchmark.span_len", "benchmark.span_len: must be positive");
  }
  return o;
}

std::string Settings::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& s : schema()) {
    const std::string key = s.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      if (!section.empty()) out << '\n';
      section = key.substr(0, dot);
      out << '[' << section << "]\n";
    }
    out << key.substr(dot + 1) << " = " << values_.at(key) << '\n';
  }
  return out.str();
}

void Settings::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_ini();
}

std::vector<std::string> Settings::known_keys() {
  std::vector<std::string> keys;
  for (const auto& s : schema()) keys.emplace_back(s.key);
  return keys;
}

}  // namespace convseq
