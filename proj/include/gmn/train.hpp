#pragma once

// Episodic training of the episode bound with Adam, global-norm clipping,
// per-t running averages, checkpoints and a JSON-lines metrics log.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "gmn/data.hpp"
#include "gmn/model.hpp"

namespace gmn {

struct AdamConfig {
  double step_size = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  GMNConfig model = GMNConfig::reduced();
  AdamConfig adam;
  int batch_episodes = 16;
  std::int64_t total_steps = 20000;
  std::int64_t checkpoint_interval = 1000;
  std::int64_t log_interval = 100;  // must divide checkpoint_interval
  double clip_norm = 10.0;
  double ema_decay = 0.99;
  std::uint64_t seed = 1;
  bool deterministic = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::int64_t t = 0;
};

struct TrainState {
  GenerativeMatchingNetwork<float> model;
  AdamState adam;
  std::int64_t step = 0;
  std::mt19937_64 data_rng;
  std::mt19937_64 noise_rng;
  std::vector<double> elbo_ema;  // per t; NaN until the first update

  TrainState(const TrainConfig& config);
  TrainState(GenerativeMatchingNetwork<float> model, AdamState adam);
};

struct StepResult {
  double loss = 0;                   // -mean episode bound
  std::vector<double> term_means;    // batch mean of each elbo_term, NaN where undefined
  double prior_entropy = 0;          // mean prior entropy over batch and t
  double grad_norm = 0;              // before clipping
  std::array<double, kParamGroupCount> group_norms{};
};

// Gradients of -mean episode bound over the batch. Episodes are evaluated
// independently and reduced in batch order.
struct BatchGradients {
  Gradients<float> grads;
  StepResult stats;
};
BatchGradients batch_gradients(const GenerativeMatchingNetwork<float>& model, std::span<const Episode> batch,
                               std::mt19937_64& noise_rng);

// Global-norm clipping followed by one Adam update.
void adam_update(ParameterStore<float>& params, AdamState& state, Gradients<float>& grads, const AdamConfig& cfg,
                 double clip_norm);

// One optimizer step on the given batch; throws NumericError on a
// non-finite loss without touching the state.
StepResult train_step(TrainState& state, const TrainConfig& config, std::span<const Episode> batch);

struct Checkpoint {
  TrainConfig config;
  ParameterStore<float> params;
  AdamState adam;
  std::int64_t step = 0;
  std::mt19937_64 data_rng;
  std::mt19937_64 noise_rng;
  std::vector<double> elbo_ema;
};

Checkpoint snapshot(const TrainState& state, const TrainConfig& config);
TrainState restore(const Checkpoint& ck);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
// CheckpointError on bad magic, version, size or checksum; ConfigError when
// `expected` is given and the stored model configuration differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const GMNConfig* expected = nullptr);

struct TrainRun {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path metrics;
  std::filesystem::path last;
};

struct TrainHooks {
  std::function<void(const StepResult&, std::int64_t step)> on_step;
};

// Samples batches from `data`, steps until total_steps, writes
// checkpoint_<step>.gmnk every checkpoint_interval (step 0 included, plus
// the final step) and metrics.jsonl every log_interval. With `resume` the
// run continues from that checkpoint and appends to the metrics log.
TrainRun run_training(const TrainConfig& config, const GlyphDataset& data, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume = std::nullopt, TrainHooks hooks = {});

std::filesystem::path checkpoint_name(std::int64_t step);

}  // namespace gmn
