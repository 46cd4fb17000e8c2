#include "convseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "convseq/checkpoint.hpp"
#include "convseq/errors.hpp"
#include "convseq/loss.hpp"
#include "convseq/ops.hpp"

namespace convseq {

void RunConfig::validate() const {
  auto fail = [](const char* key, const std::string& why) {
    throw ConfigError(key, std::string(key) + ": " + why);
  };
  if (batch_size < 1) fail("batch_size", "must be positive");
  if (sequence_length < 1) fail("sequence_length", "must be positive");
  if (eval_every < 1) fail("eval_every", "must be positive");
  if (span_len < 1) fail("span_len", "must be positive");
  if (!(corruption_rate >= 0 && corruption_rate < 1)) fail("corruption_rate", "must be in [0, 1)");
  if (lr.mode == LrMode::constant && !(lr.constant >= 0)) fail("lr", "must be nonnegative");
  if (paper_lr_grid && lr.mode == LrMode::constant &&
      std::find(std::begin(kFinetuneLrGrid), std::end(kFinetuneLrGrid), lr.constant) ==
          std::end(kFinetuneLrGrid)) {
    fail("lr", "must be one of 0.001, 0.0005, 0.0001 in grid mode");
  }
}

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open metrics log " + path.string());
  if (fresh) out_ << "step,split,metric,value\n";
}

void MetricsLog::append(std::uint64_t step, const std::string& split, const std::string& metric,
                        double value) {
  if (!out_.is_open()) return;
  out_ << step << ',' << split << ',' << metric << ',' << value << '\n';
  out_.flush();
}

TokenIds corpus_stream(const std::vector<std::string>& lines) {
  TokenIds stream;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) stream.push_back(Vocabulary::kByteOffset + '\n');
    const auto ids = tokenize(lines[i]);
    stream.insert(stream.end(), ids.begin(), ids.end());
  }
  return stream;
}

SpanCorruptionExample pretrain_example(const TokenIds& stream, const RunConfig& run,
                                       std::uint64_t index) {
  std::mt19937_64 rng(derive_seed(run.seed, index));
  const std::size_t len = std::min(run.sequence_length, stream.size());
  std::size_t start = 0;
  if (stream.size() > len) {
    start = std::uniform_int_distribution<std::size_t>(0, stream.size() - len)(rng);
  }
  return span_corrupt(std::span<const std::int32_t>(stream).subspan(start, len), run.span_len,
                      run.corruption_rate, rng);
}

namespace {

std::vector<std::vector<double>> snapshot(const ParameterStore& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : params.items()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void restore(ParameterStore& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < saved.size(); ++i) {
    Tensor t = params.items()[i].second;
    std::copy(saved[i].begin(), saved[i].end(), t.mutable_values().begin());
  }
}

void write_checkpoint(const Seq2SeqModel& model, const OptimizerState& optimizer,
                      std::uint64_t step, const std::filesystem::path& path) {
  save_checkpoint(path, make_checkpoint(model, &optimizer, step));
}

}  // namespace

PretrainResult pretrain(Seq2SeqModel& model, OptimizerState& optimizer,
                        const std::vector<std::string>& corpus, const RunConfig& run,
                        const RunOutputs& outputs) {
  run.validate();
  if (corpus.empty()) throw ContractError("pretrain: corpus is empty");
  const TokenIds stream = corpus_stream(corpus);
  if (stream.size() < run.span_len) throw ContractError("pretrain: corpus shorter than one span");

  PretrainResult result;
  auto& params = model.parameters();
  auto last_good = snapshot(params);
  const ForwardOptions opts{true, nullptr};
  std::mt19937_64 dropout_rng(derive_seed(run.seed, 0xd0d0));
  ForwardOptions train_opts = opts;
  train_opts.rng = &dropout_rng;

  double window_sum = 0.0;
  std::uint64_t window_len = 0;
  for (std::uint64_t step = 1; step <= run.steps; ++step) {
    params.zero_grad();
    Tensor batch_loss = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < run.batch_size; ++b) {
      const auto ex = pretrain_example(stream, run, (step - 1) * run.batch_size + b);
      const Tensor logits = model.forward(ex.input_ids, ex.target_ids, train_opts);
      batch_loss = add(batch_loss, seq_cross_entropy(logits, ex.target_ids));
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(run.batch_size));
    const double loss = batch_loss.item();
    if (!std::isfinite(loss)) {
      if (outputs.last_good_path) {
        restore(params, last_good);
        write_checkpoint(model, optimizer, step - 1, *outputs.last_good_path);
      }
      throw NumericalError("pretrain: loss became non-finite at step " + std::to_string(step));
    }
    backward(batch_loss);
    adafactor_step(params, optimizer, lr_at(step, run.lr));

    if (step == 1) result.initial_loss = loss;
    result.step_losses.push_back(loss);
    result.steps_done = step;
    window_sum += loss;
    ++window_len;
    if (step % run.eval_every == 0 || step == run.steps) {
      const double mean = window_sum / static_cast<double>(window_len);
      result.curve.push_back({step, mean});
      if (outputs.log) outputs.log->append(step, "train", "loss", mean);
      spdlog::info("pretrain step {} loss {:.4f}", step, mean);
      window_sum = 0.0;
      window_len = 0;
      last_good = snapshot(params);
    }
    if (outputs.checkpoint_path && run.checkpoint_every > 0 && step % run.checkpoint_every == 0) {
      write_checkpoint(model, optimizer, step, *outputs.checkpoint_path);
    }
  }
  if (outputs.checkpoint_path) write_checkpoint(model, optimizer, result.steps_done, *outputs.checkpoint_path);
  return result;
}

ClassificationMetrics score_predictions(const std::vector<std::string>& gold,
                                        const std::vector<std::optional<std::string>>& predicted,
                                        const std::string& positive_label) {
  if (gold.size() != predicted.size()) {
    throw DimensionError("score_predictions: " + std::to_string(gold.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  ClassificationMetrics m;
  m.examples = gold.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool pred_pos = predicted[i] && *predicted[i] == positive_label;
    const bool gold_pos = gold[i] == positive_label;
    if (predicted[i] && *predicted[i] == gold[i]) ++correct;
    if (pred_pos && gold_pos) ++m.tp;
    if (pred_pos && !gold_pos) ++m.fp;
    if (!pred_pos && gold_pos) ++m.fn;
  }
  if (m.examples) m.accuracy = static_cast<double>(correct) / static_cast<double>(m.examples);
  const std::size_t denom = 2 * m.tp + m.fp + m.fn;
  m.f1 = denom ? 2.0 * static_cast<double>(m.tp) / static_cast<double>(denom) : 0.0;
  return m;
}

std::vector<std::optional<std::string>> predict_labels(const Seq2SeqModel& model,
                                                       const std::string& task,
                                                       const std::vector<LabeledText>& rows) {
  const auto& spec = task_spec(task);
  std::size_t longest = 0;
  for (const auto& l : spec.labels) longest = std::max(longest, l.size());
  std::vector<std::optional<std::string>> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const TokenIds source = tokenize(spec.prefix + row.text);
    const auto generated = model.greedy_decode(source, longest + 1, Vocabulary::kEos);
    out.push_back(parse_label(task, generated));
  }
  return out;
}

ClassificationMetrics evaluate(const Seq2SeqModel& model, const std::string& task,
                               const std::vector<LabeledText>& rows) {
  std::vector<std::string> gold;
  gold.reserve(rows.size());
  for (const auto& r : rows) gold.push_back(r.label);
  return score_predictions(gold, predict_labels(model, task, rows), task_spec(task).positive_label);
}

FinetuneResult finetune(Seq2SeqModel& model, OptimizerState& optimizer, const std::string& task,
                        const std::vector<LabeledText>& train,
                        const std::vector<LabeledText>& validation, const RunConfig& run,
                        const RunOutputs& outputs) {
  run.validate();
  if (train.empty()) throw ContractError("finetune: empty training set");
  std::vector<std::pair<TokenIds, TokenIds>> examples;
  examples.reserve(train.size());
  for (const auto& row : train) examples.push_back(cast_classification(task, row.text, row.label));
  const auto& eval_rows = validation.empty() ? train : validation;

  FinetuneResult result;
  auto& params = model.parameters();
  auto best = snapshot(params);
  std::mt19937_64 dropout_rng(derive_seed(run.seed, 0xf17e));
  const ForwardOptions opts{true, &dropout_rng};

  auto evaluate_at = [&](std::uint64_t step) {
    const auto m = evaluate(model, task, eval_rows);
    const bool improved = result.history.empty() || m.accuracy > result.peak_accuracy;
    if (improved) {
      result.peak_accuracy = m.accuracy;
      result.peak_f1 = m.f1;
      result.peak_step = step;
      best = snapshot(params);
    }
    result.history.push_back({step, m, result.peak_accuracy});
    if (outputs.log) {
      outputs.log->append(step, "validation", "accuracy", m.accuracy);
      outputs.log->append(step, "validation", "f1", m.f1);
      outputs.log->append(step, "validation", "peak_accuracy", result.peak_accuracy);
    }
    spdlog::info("finetune step {} accuracy {:.4f} f1 {:.4f} peak {:.4f}", step, m.accuracy, m.f1,
                 result.peak_accuracy);
  };

  evaluate_at(0);
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  for (std::uint64_t step = 1; step <= run.steps; ++step) {
    params.zero_grad();
    Tensor batch_loss = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < run.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(derive_seed(run.seed, epoch++));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      const auto& [source, target] = examples[order[cursor++]];
      batch_loss = add(batch_loss, seq_cross_entropy(model.forward(source, target, opts), target));
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(run.batch_size));
    const double loss = batch_loss.item();
    if (!std::isfinite(loss)) {
      throw NumericalError("finetune: loss became non-finite at step " + std::to_string(step));
    }
    backward(batch_loss);
    adafactor_step(params, optimizer, lr_at(step, run.lr));
    result.step_losses.push_back(loss);
    if (outputs.log) outputs.log->append(step, "train", "loss", loss);
    if (step % run.eval_every == 0 || step == run.steps) evaluate_at(step);
  }
  restore(params, best);
  if (outputs.checkpoint_path) write_checkpoint(model, optimizer, result.peak_step, *outputs.checkpoint_path);
  return result;
}

}  // namespace convseq
