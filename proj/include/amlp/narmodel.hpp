#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amlp/multihead.hpp"
#include "amlp/random.hpp"
#include "amlp/tape.hpp"

namespace amlp {

using Tokens = std::vector<Index>;

enum class TaskKind { copy, reverse };

std::string to_string(TaskKind k);
TaskKind parse_task(std::string_view name);

struct Example {
  Tokens source;
  Tokens target;
};

/// Uniform random source sequences; the target is a fixed function of the source.
struct SyntheticTask {
  TaskKind kind = TaskKind::reverse;
  Index vocab = 16;
  Index length = 12;
  std::uint64_t seed = 1;

  Tokens target_for(std::span<const Index> source) const;
  Example sample(Rng& rng) const;
  /// The first `count` samples of the stream seeded by `seed`.
  std::vector<Example> draw(Index count) const;
};

struct NarConfig {
  Index vocab = 16;
  Index seq_len = 12;     ///< n, target length
  Index source_len = 12;  ///< m
  Index d_model = 32;
  Index heads = 2;
  Index inner = 8;  ///< c, per head
  Index mlp_hidden = 64;
  Mechanism variant = Mechanism::cov;
  Nonlinearity sigma1 = Nonlinearity::softmax;
  double beta = 0.5;
  double learning_rate = 0.1;
  double output_init_scale = 0.1;
  std::uint64_t seed = 1;

  Index head_width() const { return d_model / heads; }
  void validate() const;
};

struct ParamShape {
  std::string name;
  Shape shape;
};

/// Parameter names and shapes in storage order.
std::vector<ParamShape> parameter_layout(const NarConfig& config);

struct NarModel {
  NarConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;

  const Tensor& param(std::string_view name) const;
  std::size_t parameter_count() const;
};

/// Fresh model, seeded by config.seed.
NarModel init_model(const NarConfig& config);

/// Logits for a batch, stacked as (batch·n)×vocab, sample-major.
template <class T>
T forward_batch(const NarConfig& config, std::span<const T> params, std::span<const Tokens> sources);

/// Logits n×vocab for one source sequence.
Tensor forward(const NarModel& model, std::span<const Index> source);

/// Mean token cross-entropy of a batch, recorded on `tape`.
Var batch_loss(const NarConfig& config, std::span<const Var> params, std::span<const Example> batch);

/// One plain SGD step. Returns the loss before the update.
double train_step(NarModel& model, std::span<const Example> batch);

/// Per-position argmax, lowest id on ties.
Tokens generate(const NarModel& model, std::span<const Index> source);
Tokens argmax_rows(const Tensor& logits);

using Generator = std::function<Tokens(std::span<const Index>)>;

/// Fraction of target positions reproduced over task.draw(num_samples).
double evaluate(const Generator& gen, std::span<const Example> examples);
double evaluate(const Generator& gen, const SyntheticTask& task, Index num_samples);
double evaluate(const NarModel& model, const SyntheticTask& task, Index num_samples);

struct TrainOptions {
  Index steps = 10000;
  Index batch_size = 32;
  Index log_every = 100;
  /// Called every log_every steps with (step, loss at that step).
  std::function<void(Index, double)> on_log;
};

struct TrainResult {
  std::vector<double> losses;  ///< one per step
};

/// Training batches come from a stream seeded by config.seed, disjoint from
/// the task's evaluation stream.
TrainResult train(NarModel& model, const SyntheticTask& task, const TrainOptions& options);

void save_checkpoint(const NarModel& model, const std::filesystem::path& path);
NarModel load_checkpoint(const std::filesystem::path& path);

}  // namespace amlp
