#include "convseq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <new>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "convseq/data.hpp"
#include "convseq/errors.hpp"
#include "convseq/loss.hpp"
#include "convseq/model.hpp"
#include "convseq/ops.hpp"

namespace convseq {

std::size_t bench_target_length(std::size_t n, const TargetGeometry& g) {
  const auto spans = static_cast<std::size_t>(
      std::llround(g.corruption_rate * static_cast<double>(n) / static_cast<double>(g.span_len)));
  return spans * (g.span_len + 1) + 1;
}

namespace cost {

std::uint64_t projection(std::size_t n, std::size_t d_in, std::size_t d_out) {
  return 2ull * n * d_in * d_out;
}
std::uint64_t depthwise(std::size_t n, std::size_t d, std::size_t k) { return 2ull * n * d * k; }
std::uint64_t conv_block(std::size_t n, std::size_t d, std::size_t k) {
  return 3 * projection(n, d, d) + depthwise(n, d, k);
}
std::uint64_t kernel_generation(std::size_t n, std::size_t d, std::size_t heads, std::size_t k) {
  return 2ull * n * d * heads * k;
}
std::uint64_t attention(std::size_t q, std::size_t k, std::size_t d) {
  // q and output projections on queries, k and v on keys, scores and mixing
  return 2 * projection(q, d, d) + 2 * projection(k, d, d) + 4ull * q * k * d;
}
std::uint64_t ffn(std::size_t n, std::size_t d, std::size_t d_ff) { return 4ull * n * d * d_ff; }
std::uint64_t output_projection(std::size_t m, std::size_t d, std::size_t vocab) {
  return 2ull * m * d * vocab;
}

}  // namespace cost

FlopBreakdown flop_breakdown(const ModelConfig& config, std::size_t n, std::size_t m) {
  config.validate();
  if (n == 0 || m == 0) throw ContractError("count_flops: sequence lengths must be positive");
  const std::size_t d = config.d_model, H = config.tying_heads;
  const bool conv = is_convolutional(config.conv_variant);
  FlopBreakdown b;
  auto add = [&](const std::string& key, std::uint64_t v) { b.by_sublayer[key] += v; };

  add("embedding", 0);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t k = conv ? config.layer_schedule.at(l).width : 0;
    for (const auto& [side, len] : {std::pair{std::string("encoder"), n}, {std::string("decoder"), m}}) {
      if (conv) {
        add(side + ".conv_block", cost::conv_block(len, d, k));
        if (config.conv_variant == ConvVariant::dynamic) {
          add(side + ".kernel_generation", cost::kernel_generation(len, d, H, k));
        }
      } else {
        add(side + ".self_attention", cost::attention(len, len, d));
      }
      add(side + ".ffn", cost::ffn(len, d, config.d_ff));
    }
    add("decoder.enc_dec_attention", cost::attention(m, n, d));
  }
  if (conv && config.encoder_cross_attention) add("encoder.cross_attention", cost::attention(n, n, d));
  add("output_projection", cost::output_projection(m, d, config.vocab_size));
  for (const auto& [_, v] : b.by_sublayer) b.total += v;
  return b;
}

std::uint64_t count_flops(const ModelConfig& config, std::size_t n, std::size_t m) {
  return flop_breakdown(config, n, m).total;
}

std::uint64_t count_flops(const ModelConfig& config, std::size_t n) {
  return count_flops(config, n, bench_target_length(n));
}

std::uint64_t estimate_activation_bytes(const ModelConfig& config, std::size_t n, std::size_t m) {
  const std::uint64_t d = config.d_model, f = config.d_ff, heads = config.num_heads;
  const bool conv = is_convolutional(config.conv_variant);
  auto attention = [&](std::uint64_t q, std::uint64_t k, bool masked) {
    return 5 * heads * q * k + (masked ? q * k : 0) + 2 * (q + 2 * k) * d + 6 * q * d;
  };
  auto mixer = [&](std::uint64_t len, std::size_t layer, bool causal) -> std::uint64_t {
    if (!conv) return attention(len, len, causal);
    std::uint64_t e = 10 * len * d;
    if (config.conv_variant == ConvVariant::dynamic) {
      e += 3 * len * config.tying_heads * config.layer_schedule.at(layer).width;
    }
    return e;
  };
  auto ffn = [&](std::uint64_t len) { return 3 * len * f + 5 * len * d; };
  std::uint64_t elements = 2 * (n + m) * d;  // embeddings
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    elements += mixer(n, l, false) + ffn(n);
    elements += mixer(m, l, true) + attention(m, n, false) + ffn(m);
  }
  if (conv && config.encoder_cross_attention) elements += attention(n, n, false);
  elements += 2 * m * config.vocab_size;
  return elements * sizeof(double) * 2;  // values and gradients
}

namespace {

std::vector<std::int32_t> synthetic_tokens(std::size_t len, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> byte(Vocabulary::kByteOffset, Vocabulary::kSize - 1);
  std::vector<std::int32_t> ids(len);
  for (auto& t : ids) t = byte(rng);
  return ids;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

ThroughputResult measure_throughput(const ModelConfig& config, std::size_t n,
                                    const ThroughputOptions& options) {
  if (n == 0) throw ContractError("measure_throughput: n must be positive");
  if (options.batch == 0 || options.reps == 0) {
    throw ContractError("measure_throughput: batch and reps must be positive");
  }
  ThroughputResult result;
  const std::size_t m = bench_target_length(n, options.geometry);
  ModelConfig cfg = config;
  cfg.max_target_len = std::max(cfg.max_target_len, m);
  if (cfg.vocab_size < static_cast<std::size_t>(Vocabulary::kSize)) {
    throw ContractError("measure_throughput: vocabulary smaller than the byte vocabulary");
  }
  const std::uint64_t bytes = estimate_activation_bytes(cfg, n, m);
  if (bytes > options.memory_budget_bytes) {
    result.note = fmt::format("estimated {} MiB exceeds the {} MiB budget", bytes >> 20,
                              options.memory_budget_bytes >> 20);
    return result;
  }
  try {
    Seq2SeqModel model(cfg);
    std::mt19937_64 rng(options.seed);
    std::vector<std::pair<std::vector<std::int32_t>, std::vector<std::int32_t>>> batch;
    for (std::size_t b = 0; b < options.batch; ++b) {
      batch.emplace_back(synthetic_tokens(n, rng), synthetic_tokens(m, rng));
    }
    auto step = [&] {
      model.parameters().zero_grad();
      for (const auto& [source, target] : batch) {
        backward(seq_cross_entropy(model.forward(source, target), target));
      }
    };
    for (std::size_t i = 0; i < options.warmup; ++i) step();
    for (std::size_t i = 0; i < options.reps; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      step();
      const auto t1 = std::chrono::steady_clock::now();
      result.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  } catch (const std::bad_alloc&) {
    result.step_seconds.clear();
    result.note = "allocation failed";
    return result;
  }
  const double t = median(result.step_seconds);
  result.feasible = t > 0.0;
  result.examples_per_sec = t > 0.0 ? static_cast<double>(options.batch) / t : 0.0;
  if (!result.feasible) result.note = "timer resolution too coarse";
  return result;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractError("loglog_slope: need at least two paired points");
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw ContractError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw ContractError("loglog_slope: all x values are equal");
  return sxy / sxx;
}

ScalingReport scaling_report(const std::vector<ModelConfig>& configs,
                             const ScalingOptions& options) {
  if (options.grid.empty()) throw ContractError("scaling_report: empty sequence-length grid");
  if (configs.empty()) throw ContractError("scaling_report: no variants");
  ScalingReport report;
  for (const auto& config : configs) {
    const std::string variant(to_string(config.conv_variant));
    std::vector<double> ns, flops, tail_ns, tail_flops, t_ns, t_sec, tt_ns, tt_sec;
    for (const std::size_t n : options.grid) {
      BenchmarkRecord r;
      r.variant = variant;
      r.n = n;
      r.flops = count_flops(config, n, bench_target_length(n, options.throughput.geometry));
      r.batch = options.throughput.batch;
      r.reps = options.timing ? options.throughput.reps : 0;
      ns.push_back(static_cast<double>(n));
      flops.push_back(static_cast<double>(r.flops));
      if (n >= options.tail_min_n) {
        tail_ns.push_back(static_cast<double>(n));
        tail_flops.push_back(static_cast<double>(r.flops));
      }
      if (options.timing) {
        const auto t = measure_throughput(config, n, options.throughput);
        r.feasible = t.feasible;
        if (t.feasible) {
          r.examples_per_sec = t.examples_per_sec;
          t_ns.push_back(static_cast<double>(n));
          t_sec.push_back(1.0 / t.examples_per_sec);
          if (n >= options.tail_min_n) {
            tt_ns.push_back(static_cast<double>(n));
            tt_sec.push_back(1.0 / t.examples_per_sec);
          }
          spdlog::info("{} n={} {:.3f} examples/s", variant, n, t.examples_per_sec);
        } else {
          spdlog::info("{} n={} infeasible: {}", variant, n, t.note);
        }
      }
      report.records.push_back(r);
    }
    auto fit = [&](const std::string& quantity, std::size_t min_n, const std::vector<double>& x,
                   const std::vector<double>& y) {
      if (x.size() < 2) return;
      report.slopes.push_back({variant, quantity, min_n, x.size(), loglog_slope(x, y)});
    };
    const std::size_t lo = *std::min_element(options.grid.begin(), options.grid.end());
    fit("flops", lo, ns, flops);
    fit("flops", options.tail_min_n, tail_ns, tail_flops);
    fit("seconds_per_example", lo, t_ns, t_sec);
    fit("seconds_per_example", options.tail_min_n, tt_ns, tt_sec);
  }
  return report;
}

std::optional<SlopeFit> find_slope(const ScalingReport& report, const std::string& variant,
                                   const std::string& quantity, std::size_t min_n) {
  for (const auto& s : report.slopes) {
    if (s.variant == variant && s.quantity == quantity && s.min_n == min_n) return s;
  }
  return std::nullopt;
}

void write_benchmark_csv(const std::filesystem::path& path, const ScalingReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,n,flops,examples_per_sec,batch,reps,feasible\n";
  for (const auto& r : report.records) {
    out << r.variant << ',' << r.n << ',' << r.flops << ',';
    if (r.examples_per_sec) out << fmt::format("{:.6g}", *r.examples_per_sec);
    out << ',' << r.batch << ',' << r.reps << ',' << (r.feasible ? "true" : "false") << '\n';
  }
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string render_loglog_svg(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 420, L = 80, R = 150, T = 40, B = 60;
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0 && s.y[i] > 0)) continue;
      x_lo = std::min(x_lo, std::log10(s.x[i]));
      x_hi = std::max(x_hi, std::log10(s.x[i]));
      y_lo = std::min(y_lo, std::log10(s.y[i]));
      y_hi = std::max(y_hi, std::log10(s.y[i]));
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  y_lo = std::floor(y_lo);
  y_hi = std::max(std::ceil(y_hi), y_lo + 1);
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  auto px = [&](double lx) { return L + (lx - x_lo) / (x_hi - x_lo) * (W - L - R); };
  auto py = [&](double ly) { return H - B - (ly - y_lo) / (y_hi - y_lo) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream svg;
  svg << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      W, H);
  svg << fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
  svg << fmt::format("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                     (L + W - R) / 2, xml_escape(title));
  svg << fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T,
      W - L - R, H - T - B);
  for (double e = y_lo; e <= y_hi + 1e-9; e += 1) {
    svg << fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>"
        "<text x=\"{3}\" y=\"{4:.1f}\" text-anchor=\"end\">1e{5}</text>\n",
        L, py(e), W - R, L - 6, py(e) + 4, static_cast<int>(e));
  }
  std::vector<double> ticks;
  for (const auto& s : series) ticks.insert(ticks.end(), s.x.begin(), s.x.end());
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double t : ticks) {
    if (!(t > 0)) continue;
    const double x = px(std::log10(t));
    svg << fmt::format(
        "<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"#eee\"/>"
        "<text x=\"{0:.1f}\" y=\"{3}\" text-anchor=\"middle\">{4}</text>\n",
        x, T, H - B, H - B + 16, t);
  }
  svg << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2,
                     H - 16, xml_escape(x_label));
  svg << fmt::format(
      "<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n",
      (T + H - B) / 2, xml_escape(y_label));

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    std::string points;
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (!(series[s].x[i] > 0 && series[s].y[i] > 0)) continue;
      points += fmt::format("{:.1f},{:.1f} ", px(std::log10(series[s].x[i])),
                            py(std::log10(series[s].y[i])));
    }
    svg << fmt::format(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", points, color);
    const double ly = T + 20 + 18 * static_cast<double>(s);
    svg << fmt::format(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{5}\">{6}</text>\n",
        W - R + 10, ly, W - R + 30, color, W - R + 36, ly + 4, xml_escape(series[s].name));
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_scaling_artifacts(const std::filesystem::path& dir, const ScalingReport& report) {
  std::filesystem::create_directories(dir);
  write_benchmark_csv(dir / "benchmark.csv", report);

  std::ostringstream slopes;
  slopes << "variant,quantity,min_n,points,slope\n";
  for (const auto& s : report.slopes) {
    slopes << fmt::format("{},{},{},{},{:.6f}\n", s.variant, s.quantity, s.min_n, s.points, s.slope);
  }
  write_text(dir / "slopes.csv", slopes.str());

  std::vector<PlotSeries> speed, flops;
  for (const auto& r : report.records) {
    auto pick = [&](std::vector<PlotSeries>& v) -> PlotSeries& {
      for (auto& s : v) {
        if (s.name == r.variant) return s;
      }
      v.push_back({r.variant, {}, {}});
      return v.back();
    };
    auto& f = pick(flops);
    f.x.push_back(static_cast<double>(r.n));
    f.y.push_back(static_cast<double>(r.flops));
    if (r.examples_per_sec) {
      auto& s = pick(speed);
      s.x.push_back(static_cast<double>(r.n));
      s.y.push_back(*r.examples_per_sec);
    }
  }
  write_text(dir / "flops.svg",
             render_loglog_svg("FLOPs per example vs. sequence length", "sequence length",
                               "FLOPs", flops));
  write_text(dir / "speed.svg",
             render_loglog_svg("Training speed vs. sequence length", "sequence length",
                               "examples / second", speed));
}

}  // namespace convseq
