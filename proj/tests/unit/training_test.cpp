#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "convseq/checkpoint.hpp"
#include "convseq/errors.hpp"
#include "convseq/optim.hpp"
#include "convseq/ops.hpp"
#include "convseq/train.hpp"

using namespace convseq;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> snapshot(const ParameterStore& p) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : p.items()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

std::vector<std::string> first_lines(std::size_t count) {
  auto lines = read_corpus(fs::path(CONVSEQ_SOURCE_DIR) / "data/corpus.txt");
  lines.resize(std::min(count, lines.size()));
  return lines;
}

}  // namespace

TEST(Adafactor, ZeroGradientIsFixedPoint) {
  ParameterStore p;
  p.add("w", Tensor::matrix({{1, 2}, {3, 4}}, true));
  p.add("b", Tensor::vector({5, 6}, true));
  auto state = make_optimizer_state(p);
  const auto before = snapshot(p);
  backward(scale(add(sum(p.get("w")), sum(p.get("b"))), 0.0));
  adafactor_step(p, state, 0.01);
  EXPECT_EQ(snapshot(p), before);
}

TEST(Adafactor, ScalarStepMovesByLr) {
  ParameterStore p;
  Tensor w = p.add("w", Tensor::scalar(1.0, true));
  auto state = make_optimizer_state(p);
  backward(w);  // grad 1
  adafactor_step(p, state, 0.01);
  EXPECT_NEAR(w.item(), 1.0 - 0.01, 1e-12);
  EXPECT_FALSE(state.slots[0].factored);
}

TEST(Adafactor, RankOneFactoredEqualsFull) {
  ParameterStore p;
  Tensor w = p.add("w", Tensor::zeros({3, 4}, true));
  auto state = make_optimizer_state(p);
  ASSERT_TRUE(state.slots[0].factored);
  // grad = u v^T
  const std::vector<double> u{1, -2, 0.5}, v{3, 1, -1, 2};
  std::vector<double> g;
  for (double a : u)
    for (double b : v) g.push_back(a * b);
  backward(sum(mul(w, Tensor({3, 4}, g))));
  adafactor_step(p, state, 0.0);
  const auto est = second_moment_estimate(state, 0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(est[i], g[i] * g[i] + 1e-30, 1e-12 * (g[i] * g[i] + 1));
}

TEST(Adafactor, AccumulatorsNonnegativeAndShaped) {
  ParameterStore p;
  Tensor w = p.add("w", Tensor::matrix({{1, -2, 3}, {0.5, 1, 1}}, true));
  auto state = make_optimizer_state(p);
  for (int s = 0; s < 3; ++s) {
    p.zero_grad();
    backward(sum(mul(w, w)));
    adafactor_step(p, state, 0.01);
  }
  EXPECT_EQ(state.step, 3u);
  EXPECT_EQ(state.slots[0].row.size(), 2u);
  EXPECT_EQ(state.slots[0].col.size(), 3u);
  for (double r : state.slots[0].row) EXPECT_GE(r, 0.0);
  for (double c : state.slots[0].col) EXPECT_GE(c, 0.0);
}

TEST(Adafactor, ZeroLrIsIdentity) {
  ParameterStore p;
  Tensor w = p.add("w", Tensor::matrix({{1, -2}, {0.5, 1}}, true));
  auto state = make_optimizer_state(p);
  backward(sum(mul(w, w)));
  const auto before = snapshot(p);
  adafactor_step(p, state, 0.0);
  EXPECT_EQ(snapshot(p), before);
}

TEST(Adafactor, NonFiniteGradientRejected) {
  ParameterStore p;
  Tensor w = p.add("w", Tensor::vector({1, 2}, true));
  auto state = make_optimizer_state(p);
  backward(sum(mul(w, Tensor::vector({std::nan(""), 1}))));
  const auto before = snapshot(p);
  try {
    adafactor_step(p, state, 0.01);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  EXPECT_EQ(snapshot(p), before);
  EXPECT_EQ(state.step, 0u);
}

TEST(LrSchedule, Examples) {
  LrSchedule constant{LrMode::constant, 0.001, 10000};
  for (std::uint64_t s : {1u, 10u, 5000u, 1000000u}) EXPECT_EQ(lr_at(s, constant), 0.001);
  LrSchedule isr{};
  EXPECT_DOUBLE_EQ(lr_at(10000, isr), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(1, isr), 0.01);
  for (std::uint64_t s : {10000u, 12345u, 400000u}) EXPECT_DOUBLE_EQ(lr_at(4 * s, isr) / lr_at(s, isr), 0.5);
}

TEST(RunConfig, GridModeRejectsOtherRates) {
  RunConfig r;
  r.lr = {LrMode::constant, 0.002, 10000};
  r.paper_lr_grid = true;
  EXPECT_THROW(r.validate(), ConfigError);
  r.lr.constant = 0.0005;
  EXPECT_NO_THROW(r.validate());
  r.batch_size = 0;
  EXPECT_THROW(r.validate(), ConfigError);
}

TEST(Metrics, MajorityPredictor) {
  std::vector<std::string> gold;
  for (int i = 0; i < 10; ++i) gold.push_back(i < 6 ? "positive" : "negative");
  std::vector<std::optional<std::string>> pred(10, std::string("positive"));
  auto m = score_predictions(gold, pred, "positive");
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  EXPECT_EQ(m.tp, 6u);
  EXPECT_EQ(m.fp, 4u);
}

TEST(Metrics, Perfect) {
  std::vector<std::string> gold{"positive", "negative", "positive"};
  std::vector<std::optional<std::string>> pred(gold.begin(), gold.end());
  auto m = score_predictions(gold, pred, "positive");
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(Metrics, F1FromConfusionCounts) {
  // TP=2 FP=1 FN=1, plus one true negative and one unparseable prediction of a negative.
  std::vector<std::string> gold{"positive", "positive", "negative", "positive", "negative", "negative"};
  std::vector<std::optional<std::string>> pred{std::string("positive"), std::string("positive"),
                                               std::string("positive"), std::string("negative"),
                                               std::string("negative"), std::nullopt};
  auto m = score_predictions(gold, pred, "positive");
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 6.0);
}

TEST(Metrics, NoPositivesGivesZeroF1) {
  std::vector<std::string> gold{"negative"};
  std::vector<std::optional<std::string>> pred{std::string("negative")};
  EXPECT_EQ(score_predictions(gold, pred, "positive").f1, 0.0);
}

TEST(Pretrain, ZeroLrLeavesParametersBitIdentical) {
  Seq2SeqModel model(ModelConfig::mini());
  auto opt = make_optimizer_state(model.parameters());
  const auto before = snapshot(model.parameters());
  RunConfig run;
  run.steps = 1;
  run.lr = {LrMode::constant, 0.0, 10000};
  pretrain(model, opt, first_lines(20), run);
  EXPECT_EQ(snapshot(model.parameters()), before);
}

TEST(Pretrain, OverfitsFiftySentences) {
  // Short, repetitive sentences: a d = 8 model can memorize these, unlike 50
  // lines of the bundled corpus.
  const char* animals[] = {"cat", "dog", "fox", "owl", "hen"};
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back(std::string("the ") + animals[i % 5] + " sat on the mat.");
  Seq2SeqModel model(ModelConfig::mini());
  auto opt = make_optimizer_state(model.parameters());
  RunConfig run;
  run.steps = 200;
  run.eval_every = 20;
  auto r = pretrain(model, opt, corpus, run);
  ASSERT_FALSE(r.curve.empty());
  EXPECT_LT(r.curve.back().loss, 0.2 * r.initial_loss)
      << "initial " << r.initial_loss << " final " << r.curve.back().loss;
}

TEST(Pretrain, SameSeedSameCurve) {
  RunConfig run;
  run.steps = 30;
  run.eval_every = 10;
  auto once = [&] {
    Seq2SeqModel model(ModelConfig::mini(ConvVariant::dynamic));
    auto opt = make_optimizer_state(model.parameters());
    return pretrain(model, opt, first_lines(50), run).step_losses;
  };
  EXPECT_EQ(once(), once());
}

TEST(Pretrain, EmptyCorpusRejected) {
  Seq2SeqModel model(ModelConfig::mini());
  auto opt = make_optimizer_state(model.parameters());
  EXPECT_THROW(pretrain(model, opt, {}, RunConfig{}), ContractError);
}

TEST(Pretrain, MetricsLogColumns) {
  const auto path = fs::temp_directory_path() / "convseq_metrics_test.csv";
  fs::remove(path);
  {
    MetricsLog log(path);
    Seq2SeqModel model(ModelConfig::mini());
    auto opt = make_optimizer_state(model.parameters());
    RunConfig run;
    run.steps = 4;
    run.eval_every = 2;
    pretrain(model, opt, first_lines(10), run, RunOutputs{&log});
  }
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "step,split,metric,value");
  ASSERT_TRUE(std::getline(in, row));
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 3);
  fs::remove(path);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  for (auto v : {ConvVariant::light, ConvVariant::dynamic, ConvVariant::dilated,
                 ConvVariant::transformer}) {
    auto cfg = ModelConfig::mini(v);
    cfg.encoder_cross_attention = v == ConvVariant::light;
    Seq2SeqModel model(cfg);
    auto opt = make_optimizer_state(model.parameters());
    RunConfig run;
    run.steps = 3;
    pretrain(model, opt, first_lines(10), run);

    const auto path = fs::temp_directory_path() / "convseq_ckpt_test.bin";
    save_checkpoint(path, make_checkpoint(model, &opt, 3));
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.step, 3u);
    Seq2SeqModel restored(ck.config);
    restore_parameters(restored, ck);
    const auto opt2 = restore_optimizer(restored, ck);
    EXPECT_EQ(opt2.step, opt.step);
    for (std::size_t i = 0; i < opt.slots.size(); ++i) {
      EXPECT_EQ(opt2.slots[i].row, opt.slots[i].row);
      EXPECT_EQ(opt2.slots[i].col, opt.slots[i].col);
      EXPECT_EQ(opt2.slots[i].full, opt.slots[i].full);
    }
    const std::vector<std::int32_t> src{110, 140, 180, 200}, tgt{120, 121};
    auto a = model.forward(src, tgt), b = restored.forward(src, tgt);
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    fs::remove(path);
  }
}

TEST(Checkpoint, Errors) {
  const auto path = fs::temp_directory_path() / "convseq_bad_ckpt.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);

  Seq2SeqModel a(ModelConfig::mini(ConvVariant::light));
  Seq2SeqModel b(ModelConfig::mini(ConvVariant::transformer));
  EXPECT_THROW(restore_parameters(b, make_checkpoint(a, nullptr, 0)), ContractError);
}

TEST(Checkpoint, ConfigJsonRoundTrip) {
  auto cfg = ModelConfig::base(ConvVariant::dilated);
  cfg.encoder_cross_attention = true;
  cfg.dropout = 0.1;
  auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(back.layer_schedule, cfg.layer_schedule);
  EXPECT_EQ(back.d_ff, cfg.d_ff);
  EXPECT_EQ(back.conv_variant, cfg.conv_variant);
  EXPECT_TRUE(back.encoder_cross_attention);
  auto j = config_to_json(cfg);
  j.erase("d_model");
  try {
    config_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "d_model");
  }
}

TEST(Finetune, PeakIsMonotoneAndModelHoldsPeak) {
  Seq2SeqModel model(ModelConfig::mini());
  auto opt = make_optimizer_state(model.parameters());
  auto rows = read_classification_file(fs::path(CONVSEQ_SOURCE_DIR) / "data/sentiment.tsv");
  rows.resize(40);
  RunConfig run;
  run.steps = 60;
  run.batch_size = 8;
  run.eval_every = 10;
  run.lr = {LrMode::constant, 0.001, 10000};
  run.paper_lr_grid = true;
  auto r = finetune(model, opt, "sentiment", rows, rows, run);
  ASSERT_FALSE(r.history.empty());
  double prev = 0;
  for (const auto& p : r.history) {
    EXPECT_GE(p.peak_accuracy, prev);
    prev = p.peak_accuracy;
  }
  EXPECT_EQ(r.peak_accuracy, r.history.back().peak_accuracy);
  EXPECT_DOUBLE_EQ(evaluate(model, "sentiment", rows).accuracy, r.peak_accuracy);
}
