#include "convseq/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "convseq/errors.hpp"

namespace convseq {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'S', 'Q', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return to_little(v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::size_t size) {
  std::string s(size, '\0');
  in.read(s.data(), static_cast<std::streamsize>(size));
  if (!in) throw IoError("checkpoint truncated");
  return s;
}

void put_arrays(std::ostream& out, const std::vector<NamedArray>& arrays) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_string(out, a.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) put<double>(out, v);
  }
}

std::vector<NamedArray> get_arrays(std::istream& in) {
  const auto count = get<std::uint32_t>(in);
  std::vector<NamedArray> arrays(count);
  for (auto& a : arrays) {
    a.name = get_string(in, get<std::uint32_t>(in));
    const auto rank = get<std::uint32_t>(in);
    a.shape.resize(rank);
    for (auto& d : a.shape) d = get<std::uint64_t>(in);
    a.values.resize(shape_numel(a.shape));
    for (auto& v : a.values) v = get<double>(in);
  }
  return arrays;
}

template <typename T>
T require(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(key, std::string("config JSON is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, std::string("config JSON key '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& e : c.layer_schedule) schedule.push_back({e.width, e.dilation});
  return {
      {"num_layers", c.num_layers},
      {"d_model", c.d_model},
      {"d_ff", c.d_ff},
      {"num_heads", c.num_heads},
      {"vocab_size", c.vocab_size},
      {"conv_variant", std::string(to_string(c.conv_variant))},
      {"tying_heads", c.tying_heads},
      {"layer_schedule", schedule},
      {"encoder_cross_attention", c.encoder_cross_attention},
      {"max_target_len", c.max_target_len},
      {"dropout", c.dropout},
      {"layer_norm_eps", c.layer_norm_eps},
      {"seed", c.seed},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = require<std::size_t>(j, "num_layers");
  c.d_model = require<std::size_t>(j, "d_model");
  c.d_ff = require<std::size_t>(j, "d_ff");
  c.num_heads = require<std::size_t>(j, "num_heads");
  c.vocab_size = require<std::size_t>(j, "vocab_size");
  try {
    c.conv_variant = parse_variant(require<std::string>(j, "conv_variant"));
  } catch (const ContractError& e) {
    throw ConfigError("conv_variant", e.what());
  }
  c.tying_heads = require<std::size_t>(j, "tying_heads");
  const auto schedule = require<std::vector<std::vector<std::size_t>>>(j, "layer_schedule");
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    if (schedule[l].size() != 2) throw ConfigError("layer_schedule", "entries must be [width, dilation]");
    c.layer_schedule.push_back({l, schedule[l][0], schedule[l][1]});
  }
  c.encoder_cross_attention = require<bool>(j, "encoder_cross_attention");
  c.max_target_len = require<std::size_t>(j, "max_target_len");
  c.dropout = require<double>(j, "dropout");
  c.layer_norm_eps = require<double>(j, "layer_norm_eps");
  c.seed = require<std::uint64_t>(j, "seed");
  c.validate();
  return c;
}

Checkpoint make_checkpoint(const Seq2SeqModel& model, const OptimizerState* optimizer,
                           std::uint64_t step) {
  Checkpoint ck;
  ck.config = model.config();
  ck.step = step;
  for (const auto& [name, t] : model.parameters().items()) {
    ck.parameters.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  }
  if (optimizer) {
    ck.optimizer.push_back({"adafactor:step", {}, {static_cast<double>(optimizer->step)}});
    for (std::size_t i = 0; i < optimizer->slots.size(); ++i) {
      const auto& slot = optimizer->slots[i];
      const auto& name = optimizer->names[i];
      if (slot.factored) {
        ck.optimizer.push_back({name + ":row", {slot.row.size()}, slot.row});
        ck.optimizer.push_back({name + ":col", {slot.col.size()}, slot.col});
      } else {
        ck.optimizer.push_back({name + ":full", {slot.full.size()}, slot.full});
      }
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const std::string config_text = config_to_json(ck.config).dump(2);
    put<std::uint64_t>(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    put<std::uint64_t>(out, ck.step);
    put_arrays(out, ck.parameters);
    put_arrays(out, ck.optimizer);
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  if (const auto version = get<std::uint32_t>(in); version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto config_len = get<std::uint64_t>(in);
  ck.config = config_from_json(nlohmann::json::parse(get_string(in, config_len)));
  ck.step = get<std::uint64_t>(in);
  ck.parameters = get_arrays(in);
  ck.optimizer = get_arrays(in);
  return ck;
}

void restore_parameters(Seq2SeqModel& model, const Checkpoint& ck) {
  if (config_to_json(ck.config) != config_to_json(model.config())) {
    throw ContractError("checkpoint config does not match the model config");
  }
  auto& store = model.parameters();
  if (ck.parameters.size() != store.size()) {
    throw ContractError("checkpoint has " + std::to_string(ck.parameters.size()) +
                        " parameters, model has " + std::to_string(store.size()));
  }
  for (const auto& a : ck.parameters) {
    Tensor t = store.get(a.name);
    if (t.shape() != a.shape) {
      throw DimensionError("checkpoint parameter " + a.name + " has shape " +
                           shape_string(a.shape) + ", model expects " + shape_string(t.shape()));
    }
    std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
  }
}

OptimizerState restore_optimizer(const Seq2SeqModel& model, const Checkpoint& ck) {
  OptimizerState state = make_optimizer_state(model.parameters());
  if (ck.optimizer.empty()) return state;
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : ck.optimizer) by_name[a.name] = &a;
  auto fetch = [&](const std::string& key, std::vector<double>& dst) {
    const auto it = by_name.find(key);
    if (it == by_name.end() || it->second->values.size() != dst.size()) {
      throw ContractError("checkpoint optimizer slot " + key + " missing or mis-shaped");
    }
    dst = it->second->values;
  };
  std::vector<double> step(1);
  fetch("adafactor:step", step);
  state.step = static_cast<std::uint64_t>(step[0]);
  for (std::size_t i = 0; i < state.slots.size(); ++i) {
    auto& slot = state.slots[i];
    if (slot.factored) {
      fetch(state.names[i] + ":row", slot.row);
      fetch(state.names[i] + ":col", slot.col);
    } else {
      fetch(state.names[i] + ":full", slot.full);
    }
  }
  return state;
}

}  // namespace convseq
