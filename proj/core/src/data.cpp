#include "convseq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "convseq/errors.hpp"

namespace convseq {

std::int32_t Vocabulary::sentinel(std::int32_t index) {
  if (index < 0 || index >= kNumSentinels) {
    throw ContractError("sentinel index " + std::to_string(index) + " out of range");
  }
  return kFirstSentinel + index;
}

TokenIds tokenize(std::string_view text) {
  TokenIds ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(Vocabulary::kByteOffset + c);
  return ids;
}

std::string detokenize(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (Vocabulary::is_byte(id)) {
      out.push_back(static_cast<char>(id - Vocabulary::kByteOffset));
    } else if (id == Vocabulary::kPad) {
      out += "[pad]";
    } else if (id == Vocabulary::kEos) {
      out += "[eos]";
    } else if (Vocabulary::is_sentinel(id)) {
      out += "[sentinel_" + std::to_string(id - Vocabulary::kFirstSentinel) + "]";
    } else {
      out += "[unk_" + std::to_string(id) + "]";
    }
  }
  return out;
}

SpanCorruptionExample span_corrupt(std::span<const std::int32_t> tokens, std::size_t span_len,
                                   double rate, std::mt19937_64& rng) {
  if (span_len < 1) throw ContractError("span_corrupt: span length must be positive");
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("span_corrupt: rate must be in [0, 1)");
  if (tokens.size() < span_len) {
    throw ContractError("span_corrupt: sequence of " + std::to_string(tokens.size()) +
                        " tokens is shorter than the span length " + std::to_string(span_len));
  }
  for (auto id : tokens) {
    if (id == Vocabulary::kPad || id == Vocabulary::kEos || Vocabulary::is_sentinel(id)) {
      throw ContractError("span_corrupt: input already contains special id " + std::to_string(id));
    }
  }
  const std::size_t len = tokens.size();
  const auto num_spans = static_cast<std::size_t>(
      std::llround(rate * static_cast<double>(len) / static_cast<double>(span_len)));

  SpanCorruptionExample ex;
  ex.original_len = len;
  if (num_spans == 0) {
    ex.input_ids.assign(tokens.begin(), tokens.end());
    ex.target_ids.push_back(Vocabulary::kEos);
    return ex;
  }
  if (num_spans > static_cast<std::size_t>(Vocabulary::kNumSentinels) ||
      num_spans * (span_len + 1) - 1 > len) {
    throw PlacementError("span_corrupt: cannot fit " + std::to_string(num_spans) + " spans of " +
                         std::to_string(span_len) + " into " + std::to_string(len) + " tokens");
  }

  // Rejection sampling of start positions; a span may not touch another.
  constexpr std::size_t kRestarts = 16;
  constexpr std::size_t kAttemptsPerSpan = 64;
  std::uniform_int_distribution<std::size_t> start_dist(0, len - span_len);
  std::vector<std::size_t> starts;
  for (std::size_t restart = 0; restart < kRestarts && starts.size() < num_spans; ++restart) {
    starts.clear();
    std::size_t budget = kAttemptsPerSpan * num_spans;
    while (starts.size() < num_spans && budget-- > 0) {
      const std::size_t a = start_dist(rng);
      const bool clashes = std::any_of(starts.begin(), starts.end(), [&](std::size_t b) {
        return a < b + span_len + 1 && b < a + span_len + 1;
      });
      if (!clashes) starts.push_back(a);
    }
  }
  if (starts.size() < num_spans) {
    throw PlacementError("span_corrupt: gave up placing " + std::to_string(num_spans) +
                         " spans in " + std::to_string(len) + " tokens");
  }
  std::sort(starts.begin(), starts.end());

  std::size_t pos = 0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const auto sentinel = Vocabulary::sentinel(static_cast<std::int32_t>(s));
    ex.input_ids.insert(ex.input_ids.end(), tokens.begin() + pos, tokens.begin() + starts[s]);
    ex.input_ids.push_back(sentinel);
    ex.target_ids.push_back(sentinel);
    ex.target_ids.insert(ex.target_ids.end(), tokens.begin() + starts[s],
                         tokens.begin() + starts[s] + span_len);
    pos = starts[s] + span_len;
  }
  ex.input_ids.insert(ex.input_ids.end(), tokens.begin() + pos, tokens.end());
  ex.target_ids.push_back(Vocabulary::kEos);
  return ex;
}

TokenIds reconstruct(const SpanCorruptionExample& example) {
  // Collect the span body following each sentinel in the target.
  std::vector<TokenIds> spans(Vocabulary::kNumSentinels);
  std::int32_t current = -1;
  for (auto id : example.target_ids) {
    if (id == Vocabulary::kEos) break;
    if (Vocabulary::is_sentinel(id)) {
      current = id - Vocabulary::kFirstSentinel;
    } else if (current >= 0) {
      spans[current].push_back(id);
    }
  }
  TokenIds out;
  out.reserve(example.original_len);
  for (auto id : example.input_ids) {
    if (Vocabulary::is_sentinel(id)) {
      const auto& body = spans[id - Vocabulary::kFirstSentinel];
      out.insert(out.end(), body.begin(), body.end());
    } else {
      out.push_back(id);
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index) {
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

const std::vector<TaskSpec>& task_registry() {
  static const std::vector<TaskSpec> tasks = {
      {"sentiment", "sentiment: ", {"positive", "negative"}, "positive"},
      {"toxicity", "toxicity: ", {"toxic", "nontoxic"}, "toxic"},
      {"news", "news: ", {"world", "sports", "business", "science"}, "world"},
  };
  return tasks;
}

}  // namespace

const TaskSpec& task_spec(std::string_view task_name) {
  for (const auto& t : task_registry()) {
    if (t.name == task_name) return t;
  }
  throw ContractError("unknown task '" + std::string(task_name) + "'");
}

std::vector<std::string> task_names() {
  std::vector<std::string> names;
  for (const auto& t : task_registry()) names.push_back(t.name);
  return names;
}

std::pair<TokenIds, TokenIds> cast_classification(std::string_view task_name,
                                                  std::string_view text, std::string_view label) {
  const auto& task = task_spec(task_name);
  if (std::find(task.labels.begin(), task.labels.end(), label) == task.labels.end()) {
    throw ContractError("task '" + task.name + "' has no label '" + std::string(label) + "'");
  }
  TokenIds source = tokenize(task.prefix + std::string(text));
  TokenIds target = tokenize(label);
  target.push_back(Vocabulary::kEos);
  return {std::move(source), std::move(target)};
}

std::optional<std::string> parse_label(std::string_view task_name,
                                       std::span<const std::int32_t> generated) {
  const auto& task = task_spec(task_name);
  auto end = std::find(generated.begin(), generated.end(), Vocabulary::kEos);
  const std::string text = detokenize(std::span<const std::int32_t>(generated.begin(), end));
  for (const auto& label : task.labels) {
    if (label == text) return label;
  }
  return std::nullopt;
}

std::size_t for_each_line(const std::filesystem::path& path,
                          const std::function<void(std::string_view)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    fn(line);
    ++count;
  }
  return count;
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  for_each_line(path, [&](std::string_view line) {
    if (!line.empty()) lines.emplace_back(line);
  });
  return lines;
}

std::string escape_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (char c : field) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '\\' || i + 1 == field.size()) {
      out.push_back(field[i]);
      continue;
    }
    const char next = field[++i];
    switch (next) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case '\\': out.push_back('\\'); break;
      default:
        out.push_back('\\');
        out.push_back(next);
    }
  }
  return out;
}

std::vector<LabeledText> read_classification_file(const std::filesystem::path& path) {
  std::vector<LabeledText> rows;
  std::size_t line_no = 0;
  for_each_line(path, [&](std::string_view line) {
    ++line_no;
    if (line.empty()) return;
    const auto tab = line.rfind('\t');
    if (tab == std::string_view::npos) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected text<TAB>label");
    }
    rows.push_back({unescape_field(line.substr(0, tab)), unescape_field(line.substr(tab + 1))});
  });
  return rows;
}

void write_classification_file(const std::filesystem::path& path,
                               const std::vector<LabeledText>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& row : rows) out << escape_field(row.text) << '\t' << escape_field(row.label) << '\n';
}

}  // namespace convseq
