#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace convseq {

using TokenIds = std::vector<std::int32_t>;

// Byte-level vocabulary. Specials occupy the low ids:
//   0 pad, 1 end-of-sequence, 2..101 sentinel_0..sentinel_99,
// followed by the 256 byte values.
struct Vocabulary {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kEos = 1;
  static constexpr std::int32_t kFirstSentinel = 2;
  static constexpr std::int32_t kNumSentinels = 100;
  static constexpr std::int32_t kByteOffset = kFirstSentinel + kNumSentinels;
  static constexpr std::int32_t kSize = kByteOffset + 256;

  static std::int32_t sentinel(std::int32_t index);
  static bool is_sentinel(std::int32_t id) {
    return id >= kFirstSentinel && id < kFirstSentinel + kNumSentinels;
  }
  static bool is_byte(std::int32_t id) { return id >= kByteOffset && id < kSize; }
};

TokenIds tokenize(std::string_view text);
// Specials render as bracketed placeholders: "[pad]", "[eos]", "[sentinel_3]".
std::string detokenize(std::span<const std::int32_t> ids);

struct SpanCorruptionExample {
  TokenIds input_ids;
  TokenIds target_ids;  // (sentinel, span tokens)* eos
  std::size_t original_len = 0;
};

// Masks round(rate * len / span_len) non-overlapping, non-adjacent spans of
// exactly span_len tokens, each replaced by the next unused sentinel.
// Deterministic for a given generator state. Throws PlacementError when the
// spans cannot be placed.
SpanCorruptionExample span_corrupt(std::span<const std::int32_t> tokens, std::size_t span_len,
                                   double rate, std::mt19937_64& rng);

// Splices target spans back in at the sentinels.
TokenIds reconstruct(const SpanCorruptionExample& example);

// Mixes a base seed with an example index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index);

struct TaskSpec {
  std::string name;
  std::string prefix;               // prepended to the text, e.g. "sentiment: "
  std::vector<std::string> labels;  // canonical target strings
  std::string positive_label;       // class scored by binary F1
};

const TaskSpec& task_spec(std::string_view task_name);
std::vector<std::string> task_names();

// (task prefix + text, label string) as token ids; the target ends with eos.
std::pair<TokenIds, TokenIds> cast_classification(std::string_view task_name,
                                                  std::string_view text, std::string_view label);
// Label whose string equals the decoded ids, or nullopt.
std::optional<std::string> parse_label(std::string_view task_name,
                                       std::span<const std::int32_t> generated);

struct LabeledText {
  std::string text;
  std::string label;
};

// Streams newline-delimited UTF-8 text; the callback sees each line without
// its terminator. Returns the number of lines read.
std::size_t for_each_line(const std::filesystem::path& path,
                          const std::function<void(std::string_view)>& fn);
std::vector<std::string> read_corpus(const std::filesystem::path& path);

// Two tab-separated columns (text, label). Inside a field, "\t", "\n" and
// "\\" are escapes for tab, newline and backslash.
std::vector<LabeledText> read_classification_file(const std::filesystem::path& path);
void write_classification_file(const std::filesystem::path& path,
                               const std::vector<LabeledText>& rows);
std::string escape_field(std::string_view field);
std::string unescape_field(std::string_view field);

}  // namespace convseq
