#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amlp/narmodel.hpp"

namespace amlp {

enum class Arch { ar_causal_softmax, nar_softmax, nar_amlp };

std::string to_string(Arch a);
Arch parse_arch(std::string_view name);

struct BenchConfig {
  std::vector<Index> lengths{256, 512, 1024, 2048, 4096, 8192};
  Index batch = 12;
  Index runs = 100;
  Index warmup = 3;
  Index d_model = 512;
  Index heads = 8;
  Index c = 64;
  Nonlinearity sigma1 = Nonlinearity::relu;
  std::vector<Arch> archs{Arch::ar_causal_softmax, Arch::nar_softmax, Arch::nar_amlp};
  std::uint64_t seed = 1;
  /// Cells whose modeled footprint exceeds this are recorded infeasible.
  std::uint64_t memory_budget_bytes = std::uint64_t(2) << 30;

  void validate() const;
};

struct BenchRecord {
  Arch arch = Arch::nar_amlp;
  Index n = 0;
  Index batch = 0;
  Index runs = 0;  ///< raw timed samples
  Index kept = 0;
  bool feasible = false;
  double mean_latency_s = 0.0;  ///< meaningful only when feasible
  std::uint64_t modeled_elems = 0;
  std::optional<std::uint64_t> measured_peak_bytes;
  double min_latency_s = 0.0;
  double max_latency_s = 0.0;
};

struct IqrResult {
  std::vector<double> kept;
  double mean = 0.0;
};

/// Sorts, keeps indices floor(N/4) .. ceil(3N/4)-1, averages them.
IqrResult iqr_filter(std::span<const double> samples);

/// Peak activation element count. Source length m enters only through n = m
/// in the self-attention settings benchmarked here.
std::uint64_t model_memory(Arch arch, Index n, Index m, Index d, Index c, Index h, Index batch);

/// Multiply-add counts of the single-head forwards.
double softmax_attention_ops(Index n, Index m, Index d);
double amlp_cov_ops(Index n, Index m, Index d, Index c);

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

// Allocation accounting through the replaced global operator new.
namespace alloc_stats {
std::uint64_t current_bytes();
std::uint64_t peak_bytes();
/// Sets the peak to the current level and returns it.
std::uint64_t reset_peak();
}  // namespace alloc_stats

// Batched kernels over row-major [batch, n, d] buffers. Heads are contiguous
// column slices of width d/h.
namespace kernels {

void nar_softmax(const double* q, const double* k, const double* v, Index batch, Index n, Index d, Index heads,
                 double* out);

/// Covariance-parameterized forward per head; cq[h], ck[h] are c×(d/h).
void nar_amlp(const double* q, const double* k, const double* v, Index batch, Index n, Index d, Index heads,
              std::span<const Tensor> cq, std::span<const Tensor> ck, Nonlinearity sigma1, double* out);

/// n causal decoding steps with a growing key/value cache. Step t of sample
/// b uses row (t + b) mod pool_rows of the [pool_rows, d] pools. Writes the
/// last step's output to last[batch, d], and every step's to all[batch, n, d]
/// when given.
void ar_causal_softmax(const double* q_pool, const double* k_pool, const double* v_pool, Index pool_rows, Index batch,
                       Index n, Index d, Index heads, double* last, double* all = nullptr);

}  // namespace kernels

BenchRecord time_architecture(Arch arch, Index n, const BenchConfig& config);

struct BenchReport {
  std::vector<BenchRecord> records;
  std::string summary;
};

using Progress = std::function<void(const std::string&)>;

BenchReport run_and_report(const BenchConfig& config, const Progress& progress = {});

inline constexpr const char* kCsvHeader = "arch,n,batch,runs,kept,mean_latency_s,modeled_elems,measured_peak_bytes";

void write_csv(std::span<const BenchRecord> records, std::ostream& os);
std::string summarize(std::span<const BenchRecord> records);

struct SweepConfig {
  std::vector<Index> cs{16, 8, 4};
  Index n = 4096;  ///< timing length
  Index batch = 1;
  Index runs = 20;
  Index warmup = 3;
  NarConfig model;  ///< d_model, heads and sigma1 also drive the timing
  SyntheticTask task;
  Index train_steps = 10000;
  Index train_batch = 32;
  Index eval_samples = 512;
};

struct SweepRow {
  Index c = 0;
  double latency_s = 0.0;
  double accuracy = 0.0;
};

/// Times nar-amlp at each c (runs interleaved across c) and trains and
/// evaluates the toy model with inner dimension c.
std::vector<SweepRow> sweep_inner_dimension(const SweepConfig& config, const Progress& progress = {});

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& os);

}  // namespace amlp
