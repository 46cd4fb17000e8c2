#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "convseq/bench.hpp"
#include "convseq/checkpoint.hpp"
#include "convseq/data.hpp"
#include "convseq/errors.hpp"
#include "convseq/gradcheck.hpp"
#include "convseq/model.hpp"
#include "convseq/optim.hpp"
#include "convseq/settings.hpp"
#include "convseq/train.hpp"

namespace convseq::cli {

namespace fs = std::filesystem;

void configure_logging() {
  auto logger = spdlog::get("convseq");
  if (!logger) logger = spdlog::stderr_color_mt("convseq");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("CONVSEQ_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

namespace {

struct Invocation {
  std::string command;
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

Settings effective_settings(const Invocation& inv) {
  Settings s = Settings::load(inv.config);
  for (const auto& o : inv.overrides) s.apply_override(o);
  if (inv.seed) s.set_seed(*inv.seed);
  return s;
}

// Every command echoes its settings so that a run can be repeated from them.
fs::path prepare_out(const Invocation& inv, const Settings& s) {
  const fs::path dir(inv.out);
  fs::create_directories(dir);
  s.save(dir / "config.ini");
  return dir;
}

fs::path require_file(const Settings& s, const std::string& key) {
  const std::string value = s.get(key);
  if (value.empty()) throw ConfigError(key, key + ": a path is required for this command");
  if (!fs::exists(value)) throw IoError(key + ": file not found: " + value);
  return value;
}

void require_task(const Settings& s, const std::string& key) {
  const auto names = task_names();
  if (std::find(names.begin(), names.end(), s.get(key)) == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError(key, key + ": unknown task '" + s.get(key) + "' (known: " + known + ")");
  }
}

Seq2SeqModel model_from_checkpoint(const Checkpoint& ck) {
  Seq2SeqModel model(ck.config);
  restore_parameters(model, ck);
  return model;
}

int cmd_pretrain(const Invocation& inv, std::ostream& out) {
  const Settings s = effective_settings(inv);
  const ModelConfig config = s.model_config();
  const RunConfig run = s.pretrain_run();
  const fs::path corpus_path = require_file(s, "pretrain.corpus");
  const fs::path dir = prepare_out(inv, s);

  Seq2SeqModel model(config);
  OptimizerState optimizer = make_optimizer_state(model.parameters());
  MetricsLog log(dir / "metrics.csv");
  RunOutputs outputs{&log, dir / "checkpoint.bin", dir / "last_good.bin"};
  const auto corpus = read_corpus(corpus_path);
  const auto result = pretrain(model, optimizer, corpus, run, outputs);
  const double final_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;
  out << fmt::format("pretrain: steps={} params={} initial_loss={:.4f} final_loss={:.4f} checkpoint={}\n",
                     result.steps_done, model.parameters().total_numel(), result.initial_loss,
                     final_loss, (dir / "checkpoint.bin").string());
  return kOk;
}

int cmd_finetune(const Invocation& inv, std::ostream& out) {
  const Settings s = effective_settings(inv);
  const RunConfig base_run = s.finetune_run();
  require_task(s, "finetune.task");
  const std::string task = s.get("finetune.task");
  const fs::path ck_path = require_file(s, "finetune.checkpoint");
  const fs::path train_path = require_file(s, "finetune.train");
  std::vector<LabeledText> validation;
  if (!s.get("finetune.validation").empty()) {
    validation = read_classification_file(require_file(s, "finetune.validation"));
  }
  const auto train = read_classification_file(train_path);
  const fs::path dir = prepare_out(inv, s);
  const Checkpoint ck = load_checkpoint(ck_path);

  std::vector<double> rates{base_run.lr.constant};
  if (s.get_bool("finetune.lr_search")) rates.assign(std::begin(kFinetuneLrGrid), std::end(kFinetuneLrGrid));

  MetricsLog log(dir / "metrics.csv");
  std::optional<FinetuneResult> best;
  double best_lr = 0.0;
  for (const double lr : rates) {
    RunConfig run = base_run;
    run.lr.constant = lr;
    run.validate();
    Seq2SeqModel model = model_from_checkpoint(ck);
    OptimizerState optimizer = make_optimizer_state(model.parameters());
    const fs::path candidate = dir / fmt::format("checkpoint_lr{}.bin", lr);
    RunOutputs outputs{&log, candidate, std::nullopt};
    spdlog::info("fine-tuning {} with lr {}", task, lr);
    auto result = finetune(model, optimizer, task, train, validation, run, outputs);
    out << fmt::format("finetune: lr={} peak_accuracy={:.4f} peak_f1={:.4f} peak_step={}\n", lr,
                       result.peak_accuracy, result.peak_f1, result.peak_step);
    if (!best || result.peak_accuracy > best->peak_accuracy) {
      best = std::move(result);
      best_lr = lr;
      fs::copy_file(candidate, dir / "checkpoint.bin", fs::copy_options::overwrite_existing);
    }
    fs::remove(candidate);
  }
  out << fmt::format("finetune: best lr={} peak_accuracy={:.4f} peak_f1={:.4f} checkpoint={}\n",
                     best_lr, best->peak_accuracy, best->peak_f1, (dir / "checkpoint.bin").string());
  return kOk;
}

int cmd_eval(const Invocation& inv, std::ostream& out) {
  const Settings s = effective_settings(inv);
  require_task(s, "eval.task");
  const fs::path ck_path = require_file(s, "eval.checkpoint");
  const fs::path data_path = require_file(s, "eval.data");
  const fs::path dir = prepare_out(inv, s);
  const Seq2SeqModel model = model_from_checkpoint(load_checkpoint(ck_path));
  const auto rows = read_classification_file(data_path);
  const auto m = evaluate(model, s.get("eval.task"), rows);
  MetricsLog log(dir / "metrics.csv");
  log.append(0, "eval", "accuracy", m.accuracy);
  log.append(0, "eval", "f1", m.f1);
  out << fmt::format("eval: examples={} accuracy={:.4f} f1={:.4f}\n", m.examples, m.accuracy, m.f1);
  return kOk;
}

int cmd_benchmark(const Invocation& inv, std::ostream& out) {
  Settings s = effective_settings(inv);
  const ScalingOptions options = s.scaling_options();
  std::vector<ModelConfig> configs;
  const auto variants = s.get_list("benchmark.variants");
  if (variants.empty()) throw ConfigError("benchmark.variants", "benchmark.variants: must not be empty");
  for (const auto& v : variants) {
    Settings per_variant = s;
    try {
      per_variant.set("model.conv_variant", v);
    } catch (const ConfigError& e) {
      throw ConfigError("benchmark.variants", std::string("benchmark.variants: ") + e.what());
    }
    configs.push_back(per_variant.model_config());
  }
  const fs::path dir = prepare_out(inv, s);
  const ScalingReport report = scaling_report(configs, options);
  write_scaling_artifacts(dir, report);
  for (const auto& slope : report.slopes) {
    out << fmt::format("benchmark: {} {} slope over n>={} ({} points) = {:.4f}\n", slope.variant,
                       slope.quantity, slope.min_n, slope.points, slope.slope);
  }
  out << fmt::format("benchmark: wrote {}\n", (dir / "benchmark.csv").string());
  if (options.timing && std::none_of(report.records.begin(), report.records.end(),
                                     [](const BenchmarkRecord& r) { return r.feasible; })) {
    spdlog::error("every grid point was infeasible");
    return kRuntimeError;
  }
  return kOk;
}

int cmd_gradcheck(const Invocation& inv, std::ostream& out) {
  const Settings s = effective_settings(inv);
  GradCheckOptions options;
  options.step = s.get_double("gradcheck.step");
  options.tolerance = s.get_double("gradcheck.tolerance");
  options.seed = s.get_uint("run.seed");
  if (!(options.step > 0)) throw ConfigError("gradcheck.step", "gradcheck.step: must be positive");
  prepare_out(inv, s);
  const auto results = run_gradcheck_suite(options);
  std::vector<std::string> failed;
  out << fmt::format("{:<34} {:>12} {:>8}  {}\n", "op", "max_rel_err", "entries", "status");
  for (const auto& r : results) {
    out << fmt::format("{:<34} {:>12.3e} {:>8}  {}\n", r.name, r.max_rel_error, r.entries,
                       r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.name);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    out << "gradcheck: failed: " << names << '\n';
    spdlog::error("gradient check failed for: {}", names);
    return kGradcheckFailed;
  }
  out << fmt::format("gradcheck: all {} checks below {:g}\n", results.size(), options.tolerance);
  return kOk;
}

// Words are whitespace-separated; trailing punctuation is its own unit.
std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream in(line);
  std::string w;
  while (in >> w) {
    std::string tail;
    while (w.size() > 1 && std::ispunct(static_cast<unsigned char>(w.back()))) {
      tail.insert(tail.begin(), w.back());
      w.pop_back();
    }
    words.push_back(w);
    for (char c : tail) words.emplace_back(1, c);
  }
  return words;
}

std::string join_units(const std::vector<std::string>& units) {
  std::string s;
  for (const auto& u : units) {
    const bool attach = u.size() == 1 && std::ispunct(static_cast<unsigned char>(u[0])) && !s.empty();
    if (!s.empty() && !attach) s += ' ';
    s += u;
  }
  return s;
}

std::string sentinel_text(std::int32_t id) {
  return "[sentinel_" + std::to_string(id - Vocabulary::kFirstSentinel) + "]";
}

int cmd_corrupt(const Invocation& inv, std::ostream& out) {
  const Settings s = effective_settings(inv);
  const std::size_t span_len = s.get_uint("corrupt.span_len");
  const double rate = s.get_double("corrupt.rate");
  if (span_len < 1) throw ConfigError("corrupt.span_len", "corrupt.span_len: must be positive");
  if (!(rate >= 0 && rate < 1)) throw ConfigError("corrupt.rate", "corrupt.rate: must be in [0, 1)");
  const bool words = s.get("corrupt.granularity") == "word";
  const std::uint64_t seed = s.get_uint("run.seed");
  prepare_out(inv, s);

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!s.get("corrupt.input").empty()) {
    file.open(require_file(s, "corrupt.input"));
    in = &file;
  }
  std::string line;
  for (std::uint64_t index = 0; std::getline(*in, line); ++index) {
    std::mt19937_64 rng(derive_seed(seed, index));
    std::vector<std::string> units;
    TokenIds ids;
    if (words) {
      units = split_words(line);
      for (std::size_t i = 0; i < units.size(); ++i) {
        ids.push_back(Vocabulary::kByteOffset + static_cast<std::int32_t>(i));
      }
    } else {
      ids = tokenize(line);
    }
    SpanCorruptionExample ex;
    if (ids.size() < span_len) {
      ex.input_ids = ids;
      ex.target_ids = {Vocabulary::kEos};
    } else {
      ex = span_corrupt(ids, span_len, rate, rng);
    }
    ex.target_ids.pop_back();  // eos
    std::string input_text, target_text;
    if (words) {
      auto render = [&](const TokenIds& t) {
        std::vector<std::string> parts;
        for (auto id : t) {
          parts.push_back(Vocabulary::is_sentinel(id) ? sentinel_text(id)
                                                      : units[id - Vocabulary::kByteOffset]);
        }
        return join_units(parts);
      };
      input_text = render(ex.input_ids);
      target_text = render(ex.target_ids);
    } else {
      input_text = detokenize(ex.input_ids);
      target_text = detokenize(ex.target_ids);
    }
    out << "input:  " << input_text << '\n' << "target: " << target_text << '\n';
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"Convolutional sequence-to-sequence models: training, evaluation and benchmarks",
               "convseq"};
  app.require_subcommand(1);
  Invocation inv;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"pretrain", "Span-denoising pre-training"},
      {"finetune", "Classification fine-tuning from a checkpoint"},
      {"eval", "Accuracy and F1 of a checkpoint on a labeled file"},
      {"benchmark", "FLOPs and throughput scaling with sequence length"},
      {"gradcheck", "Finite-difference gradient checks"},
      {"corrupt", "Preview span corruption of stdin or a file"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config, "INI settings file")->required();
    sub->add_option("--out", inv.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", inv.seed, "Seed for initialization and sampling");
    sub->add_option("overrides", inv.overrides, "section.key=value settings overrides");
    sub->callback([&inv, n = std::string(name)] { inv.command = n; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    std::cerr << "convseq: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (inv.command == "pretrain") return cmd_pretrain(inv, out);
    if (inv.command == "finetune") return cmd_finetune(inv, out);
    if (inv.command == "eval") return cmd_eval(inv, out);
    if (inv.command == "benchmark") return cmd_benchmark(inv, out);
    if (inv.command == "gradcheck") return cmd_gradcheck(inv, out);
    if (inv.command == "corrupt") return cmd_corrupt(inv, out);
  } catch (const ConfigError& e) {
    std::cerr << "convseq: config error [" << e.key() << "]: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "convseq: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace convseq::cli
