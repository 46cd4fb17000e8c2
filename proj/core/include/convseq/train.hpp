#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "convseq/data.hpp"
#include "convseq/model.hpp"
#include "convseq/optim.hpp"

namespace convseq {

struct RunConfig {
  std::uint64_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t sequence_length = 64;  // tokens per pre-training window
  LrSchedule lr;
  std::uint64_t eval_every = 100;
  std::uint64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 1;
  std::size_t span_len = 3;
  double corruption_rate = 0.15;
  // Restrict constant learning rates to the fine-tuning grid.
  bool paper_lr_grid = false;

  void validate() const;
};

// Append-only "step,split,metric,value" log.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  void append(std::uint64_t step, const std::string& split, const std::string& metric,
              double value);

 private:
  std::ofstream out_;
};

// Where a run writes its artifacts. Every field is optional.
struct RunOutputs {
  MetricsLog* log = nullptr;
  std::optional<std::filesystem::path> checkpoint_path;  // final / periodic
  std::optional<std::filesystem::path> last_good_path;   // written on divergence
};

struct LossPoint {
  std::uint64_t step = 0;
  double loss = 0.0;  // mean batch loss over the window ending at step
};

struct PretrainResult {
  double initial_loss = 0.0;  // batch loss of the first step
  std::vector<double> step_losses;
  std::vector<LossPoint> curve;
  std::uint64_t steps_done = 0;
};

// Tokenized corpus as one stream of lines joined by '\n'.
TokenIds corpus_stream(const std::vector<std::string>& lines);

// Span-corrupted example `index` of the deterministic pre-training sampler.
SpanCorruptionExample pretrain_example(const TokenIds& stream, const RunConfig& run,
                                       std::uint64_t index);

// Teacher-forced span-denoising training. Throws NumericalError when the loss
// becomes non-finite, after writing the last good parameters if requested.
PretrainResult pretrain(Seq2SeqModel& model, OptimizerState& optimizer,
                        const std::vector<std::string>& corpus, const RunConfig& run,
                        const RunOutputs& outputs = {});

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;  // binary, positive class; 0 when it never occurs
  std::size_t examples = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Predictions that failed to parse (nullopt) count as wrong.
ClassificationMetrics score_predictions(const std::vector<std::string>& gold,
                                        const std::vector<std::optional<std::string>>& predicted,
                                        const std::string& positive_label);

std::vector<std::optional<std::string>> predict_labels(const Seq2SeqModel& model,
                                                       const std::string& task,
                                                       const std::vector<LabeledText>& rows);
ClassificationMetrics evaluate(const Seq2SeqModel& model, const std::string& task,
                               const std::vector<LabeledText>& rows);

struct EvalPoint {
  std::uint64_t step = 0;
  ClassificationMetrics metrics;
  double peak_accuracy = 0.0;  // best so far, never decreases
};

struct FinetuneResult {
  std::vector<EvalPoint> history;
  double peak_accuracy = 0.0;
  double peak_f1 = 0.0;
  std::uint64_t peak_step = 0;
  std::vector<double> step_losses;
};

// Constant-learning-rate fine-tuning that tracks the best validation accuracy
// and leaves the model holding the parameters of that peak.
FinetuneResult finetune(Seq2SeqModel& model, OptimizerState& optimizer, const std::string& task,
                        const std::vector<LabeledText>& train,
                        const std::vector<LabeledText>& validation, const RunConfig& run,
                        const RunOutputs& outputs = {});

}  // namespace convseq
