#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convseq/config.hpp"

namespace convseq {

// Target length paired with a source of length n in the benchmark task:
// one sentinel plus span_len tokens per masked span, then eos.
struct TargetGeometry {
  std::size_t span_len = 3;
  double corruption_rate = 0.15;
};
std::size_t bench_target_length(std::size_t n, const TargetGeometry& geometry = {});

// Closed-form forward FLOPs (2 x multiply-accumulates) of each sublayer type.
// Elementwise work, softmax, normalization and the embedding gather count 0.
namespace cost {
std::uint64_t projection(std::size_t n, std::size_t d_in, std::size_t d_out);  // 2 n d_in d_out
std::uint64_t conv_block(std::size_t n, std::size_t d, std::size_t k);  // W_I, W_S, W_O and taps
std::uint64_t depthwise(std::size_t n, std::size_t d, std::size_t k);   // 2 n d k
std::uint64_t kernel_generation(std::size_t n, std::size_t d, std::size_t heads, std::size_t k);
// Queries of length q over keys of length k: 4 q d^2 + 4 k d^2 + 4 q k d.
std::uint64_t attention(std::size_t q, std::size_t k, std::size_t d);
std::uint64_t ffn(std::size_t n, std::size_t d, std::size_t d_ff);  // 4 n d d_ff
std::uint64_t output_projection(std::size_t m, std::size_t d, std::size_t vocab);
}  // namespace cost

struct FlopBreakdown {
  std::map<std::string, std::uint64_t> by_sublayer;  // summed over layers
  std::uint64_t total = 0;
};

// One teacher-forced forward pass over a source of length n and a target of
// length m. Throws ContractError on an invalid config or n == 0.
FlopBreakdown flop_breakdown(const ModelConfig& config, std::size_t n, std::size_t m);
std::uint64_t count_flops(const ModelConfig& config, std::size_t n, std::size_t m);
// m from bench_target_length(n).
std::uint64_t count_flops(const ModelConfig& config, std::size_t n);

// Rough size of the autodiff tape for one example (values plus gradients).
std::uint64_t estimate_activation_bytes(const ModelConfig& config, std::size_t n, std::size_t m);

struct ThroughputOptions {
  std::size_t batch = 1;
  std::size_t reps = 5;
  std::size_t warmup = 3;
  std::uint64_t memory_budget_bytes = 2ull << 30;
  TargetGeometry geometry;
  std::uint64_t seed = 1;
};

struct ThroughputResult {
  bool feasible = false;
  double examples_per_sec = 0.0;  // batch / median step time
  std::vector<double> step_seconds;
  std::string note;  // why a point was infeasible
};

// Times forward + backward of the span-denoising loss on synthetic tokens.
// Points over the memory budget, or that fail to allocate, come back
// infeasible instead of throwing.
ThroughputResult measure_throughput(const ModelConfig& config, std::size_t n,
                                    const ThroughputOptions& options = {});

struct BenchmarkRecord {
  std::string variant;
  std::size_t n = 0;
  std::uint64_t flops = 0;
  std::optional<double> examples_per_sec;  // empty in flops-only mode
  std::size_t batch = 0;
  std::size_t reps = 0;
  bool feasible = true;
};

struct SlopeFit {
  std::string variant;
  std::string quantity;  // "flops" or "seconds_per_example"
  std::size_t min_n = 0;
  std::size_t points = 0;
  double slope = 0.0;
};

struct ScalingOptions {
  std::vector<std::size_t> grid{64, 128, 256, 512, 1024, 2048, 4096};
  bool timing = true;
  std::size_t tail_min_n = 1024;  // second fit over the long-sequence regime
  ThroughputOptions throughput;
};

struct ScalingReport {
  std::vector<BenchmarkRecord> records;
  std::vector<SlopeFit> slopes;
};

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Runs sequentially; concurrent load on the machine skews the timings.
ScalingReport scaling_report(const std::vector<ModelConfig>& configs,
                             const ScalingOptions& options = {});

std::optional<SlopeFit> find_slope(const ScalingReport& report, const std::string& variant,
                                   const std::string& quantity, std::size_t min_n);

// CSV header: variant,n,flops,examples_per_sec,batch,reps,feasible
void write_benchmark_csv(const std::filesystem::path& path, const ScalingReport& report);
// benchmark.csv, slopes.csv, speed.svg, flops.svg.
void write_scaling_artifacts(const std::filesystem::path& dir, const ScalingReport& report);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};
// Static log-log line plot.
std::string render_loglog_svg(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<PlotSeries>& series);

}  // namespace convseq
