#include "gmn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <zlib.h>

#include "gmn/errors.hpp"

namespace gmn {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

AdamState zero_moments(const ParameterStore<float>& params) {
  AdamState s;
  for (ParamId p = 0; p < params.count(); ++p) {
    s.m.emplace_back(params.data(p).size(), 0.0f);
    s.v.emplace_back(params.data(p).size(), 0.0f);
  }
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (adam.step_size < 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 ||
      adam.epsilon <= 0)
    throw ConfigError("Adam needs step_size >= 0, decays in [0, 1) and epsilon > 0");
  if (batch_episodes < 1) throw ConfigError("batch_episodes must be >= 1");
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (checkpoint_interval < 1 || log_interval < 1) throw ConfigError("intervals must be >= 1");
  if (checkpoint_interval % log_interval != 0)
    throw ConfigError("checkpoint_interval must be a multiple of log_interval");
  if (clip_norm <= 0) throw ConfigError("clip_norm must be > 0");
  if (ema_decay < 0 || ema_decay >= 1) throw ConfigError("ema_decay must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = c.model;
  j["step_size"] = c.adam.step_size;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["epsilon"] = c.adam.epsilon;
  j["batch_episodes"] = c.batch_episodes;
  j["total_steps"] = c.total_steps;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["log_interval"] = c.log_interval;
  j["clip_norm"] = c.clip_norm;
  j["ema_decay"] = c.ema_decay;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  from_json(j, c.model);
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("step_size", c.adam.step_size);
  take("beta1", c.adam.beta1);
  take("beta2", c.adam.beta2);
  take("epsilon", c.adam.epsilon);
  take("batch_episodes", c.batch_episodes);
  take("total_steps", c.total_steps);
  take("checkpoint_interval", c.checkpoint_interval);
  take("log_interval", c.log_interval);
  take("clip_norm", c.clip_norm);
  take("ema_decay", c.ema_decay);
  take("seed", c.seed);
  take("deterministic", c.deterministic);
}

TrainState::TrainState(const TrainConfig& config)
    : model(config.model, config.seed),
      data_rng(derive_rng(config.seed, 1)),
      noise_rng(derive_rng(config.seed, 2)),
      elbo_ema(config.model.episode_length, kNaN) {
  adam = zero_moments(model.parameters());
}

TrainState::TrainState(GenerativeMatchingNetwork<float> m, AdamState a)
    : model(std::move(m)), adam(std::move(a)), elbo_ema(model.config().episode_length, kNaN) {}

BatchGradients batch_gradients(const GenerativeMatchingNetwork<float>& model, std::span<const Episode> batch,
                               std::mt19937_64& noise_rng) {
  const GMNConfig& cfg = model.config();
  const int n = int(batch.size());
  if (n == 0) throw ContractError("empty batch");
  std::vector<std::vector<float>> noise(n);
  for (int e = 0; e < n; ++e) {
    auto eps = standard_normal_noise(noise_rng, batch[e].items.size() * std::size_t(cfg.latent_dim));
    noise[e].assign(eps.begin(), eps.end());
  }

  struct EpisodeResult {
    Gradients<float> grads;
    double total = 0;
    std::vector<double> terms;
    double entropy = 0;
    int entropy_count = 0;
  };
  std::vector<EpisodeResult> results(n);
  const float factor = -1.0f / float(n);
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < n; ++e) {
    const auto images = batch[e].images();
    ad::Tape<float> tape;
    EpisodeElbo el = episode_elbo(tape, model, images, noise[e]);
    tape.backward(el.total);
    EpisodeResult& r = results[e];
    r.grads = Gradients<float>::zeros_like(model.parameters());
    r.grads.add_from(tape, factor);
    r.total = tape.scalar(el.total);
    r.terms.assign(images.size(), kNaN);
    for (std::size_t i = 0; i < el.terms.size(); ++i) {
      r.terms[el.first + i] = tape.scalar(el.terms[i].value);
      r.entropy += diag_gaussian_entropy(read_gaussian(tape, el.terms[i].p));
      ++r.entropy_count;
    }
  }

  BatchGradients out;
  out.grads = Gradients<float>::zeros_like(model.parameters());
  out.stats.term_means.assign(cfg.episode_length, 0.0);
  std::vector<int> term_counts(cfg.episode_length, 0);
  double total = 0, entropy = 0;
  int entropy_count = 0;
  for (const EpisodeResult& r : results) {
    out.grads.add(r.grads);
    total += r.total;
    entropy += r.entropy;
    entropy_count += r.entropy_count;
    for (std::size_t t = 0; t < r.terms.size() && t < out.stats.term_means.size(); ++t)
      if (!std::isnan(r.terms[t])) {
        out.stats.term_means[t] += r.terms[t];
        ++term_counts[t];
      }
  }
  for (std::size_t t = 0; t < term_counts.size(); ++t)
    out.stats.term_means[t] = term_counts[t] ? out.stats.term_means[t] / term_counts[t] : kNaN;
  out.stats.loss = -total / n;
  out.stats.prior_entropy = entropy_count ? entropy / entropy_count : kNaN;
  double sq = 0;
  for (ParamId p = 0; p < model.parameters().count(); ++p) {
    const double s = out.grads.squared_norm(p);
    out.stats.group_norms[int(model.parameters().group(p))] += s;
    sq += s;
  }
  for (double& g : out.stats.group_norms) g = std::sqrt(g);
  out.stats.grad_norm = std::sqrt(sq);
  return out;
}

void adam_update(ParameterStore<float>& params, AdamState& state, Gradients<float>& grads, const AdamConfig& cfg,
                 double clip_norm) {
  double sq = 0;
  for (ParamId p = 0; p < params.count(); ++p) sq += grads.squared_norm(p);
  const double norm = std::sqrt(sq);
  const float clip = norm > clip_norm ? float(clip_norm / norm) : 1.0f;
  if (state.m.size() != std::size_t(params.count())) state = zero_moments(params);
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  const float lr = float(cfg.step_size / c1), eps = float(cfg.epsilon);
  const float inv_c2 = float(1.0 / c2);
  for (ParamId p = 0; p < params.count(); ++p) {
    auto w = params.data(p);
    auto& g = grads.values[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i] * clip;
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      w[i] -= lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

StepResult train_step(TrainState& state, const TrainConfig& config, std::span<const Episode> batch) {
  BatchGradients bg = batch_gradients(state.model, batch, state.noise_rng);
  if (!std::isfinite(bg.stats.loss) || !std::isfinite(bg.stats.grad_norm))
    throw NumericError("non-finite loss or gradient at step " + std::to_string(state.step + 1));
  adam_update(state.model.mutable_parameters(), state.adam, bg.grads, config.adam, config.clip_norm);
  ++state.step;
  for (std::size_t t = 0; t < state.elbo_ema.size() && t < bg.stats.term_means.size(); ++t) {
    const double v = bg.stats.term_means[t];
    if (std::isnan(v)) continue;
    double& ema = state.elbo_ema[t];
    ema = std::isnan(ema) ? v : config.ema_decay * ema + (1 - config.ema_decay) * v;
  }
  return bg.stats;
}

Checkpoint snapshot(const TrainState& state, const TrainConfig& config) {
  return Checkpoint{config,         state.model.parameters(), state.adam, state.step, state.data_rng,
                    state.noise_rng, state.elbo_ema};
}

TrainState restore(const Checkpoint& ck) {
  TrainState s(GenerativeMatchingNetwork<float>(ck.config.model, ck.params), ck.adam);
  s.step = ck.step;
  s.data_rng = ck.data_rng;
  s.noise_rng = ck.noise_rng;
  s.elbo_ema = ck.elbo_ema;
  return s;
}

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'M', 'N', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::mt19937_64 rng_from_text(const std::string& s) {
  std::istringstream ss(s);
  std::mt19937_64 rng;
  ss >> rng;
  if (!ss) throw CheckpointError("unreadable RNG state");
  return rng;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(in[pos + i])) << (8 * i);
  return U(v);
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_le(out, bits);
  }
}

void get_floats(const std::string& in, std::size_t& pos, std::span<float> values) {
  if (pos + values.size() * 4 > in.size()) throw CheckpointError("checkpoint payload truncated");
  for (float& f : values) {
    const auto bits = get_le<std::uint32_t>(in, pos);
    std::memcpy(&f, &bits, 4);
    pos += 4;
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["config"] = ck.config;
  header["step"] = ck.step;
  header["adam_t"] = ck.adam.t;
  header["data_rng"] = rng_text(ck.data_rng);
  header["noise_rng"] = rng_text(ck.noise_rng);
  header["elbo_ema"] = ck.elbo_ema;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (ParamId p = 0; p < ck.params.count(); ++p)
    tensors.push_back({{"name", ck.params.name(p)},
                       {"shape", ck.params.shape(p)},
                       {"group", to_string(ck.params.group(p))}});
  const std::string text = header.dump();

  std::string payload;
  put_le<std::uint64_t>(payload, text.size());
  payload += text;
  const bool has_moments = ck.adam.m.size() == std::size_t(ck.params.count());
  for (ParamId p = 0; p < ck.params.count(); ++p) {
    put_floats(payload, ck.params.data(p));
    if (has_moments) {
      put_floats(payload, ck.adam.m[p]);
      put_floats(payload, ck.adam.v[p]);
    } else {
      const std::vector<float> zeros(ck.params.data(p).size(), 0.0f);
      put_floats(payload, zeros);
      put_floats(payload, zeros);
    }
  }

  std::string file(kCheckpointMagic, 4);
  put_le(file, kCheckpointVersion);
  put_le<std::uint64_t>(file, payload.size());
  put_le<std::uint32_t>(file, std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                                                  uInt(payload.size()))));
  file += payload;

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(tmp.string() + ": cannot open for writing");
    out.write(file.data(), std::streamsize(file.size()));
    if (!out) throw CheckpointError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const GMNConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string file = ss.str();
  constexpr std::size_t kHeader = 4 + 4 + 8 + 4;
  if (file.size() < kHeader || file.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw CheckpointError(path.string() + ": not a checkpoint file");
  const auto version = get_le<std::uint32_t>(file, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto size = get_le<std::uint64_t>(file, 8);
  const auto crc = get_le<std::uint32_t>(file, 16);
  if (file.size() != kHeader + size) throw CheckpointError(path.string() + ": size does not match the header");
  const std::string payload = file.substr(kHeader);
  if (std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), uInt(payload.size()))) != crc)
    throw CheckpointError(path.string() + ": checksum mismatch");

  const auto text_size = get_le<std::uint64_t>(payload, 0);
  if (8 + text_size > payload.size()) throw CheckpointError(path.string() + ": header truncated");
  const auto header = nlohmann::json::parse(payload.substr(8, text_size));
  Checkpoint ck;
  ck.config = header.at("config").get<TrainConfig>();
  if (expected && !(ck.config.model == *expected))
    throw ConfigError(path.string() + ": checkpoint model configuration differs from the requested one");
  ck.step = header.at("step").get<std::int64_t>();
  ck.adam.t = header.at("adam_t").get<std::int64_t>();
  ck.data_rng = rng_from_text(header.at("data_rng").get<std::string>());
  ck.noise_rng = rng_from_text(header.at("noise_rng").get<std::string>());
  for (const auto& v : header.at("elbo_ema")) ck.elbo_ema.push_back(v.is_null() ? kNaN : v.get<double>());
  std::size_t pos = 8 + text_size;
  for (const auto& t : header.at("tensors")) {
    const ParamId p = ck.params.add(t.at("name").get<std::string>(), t.at("shape").get<ad::Shape>(),
                                    parse_param_group(t.at("group").get<std::string>()));
    get_floats(payload, pos, ck.params.data(p));
    ck.adam.m.emplace_back(ck.params.data(p).size());
    ck.adam.v.emplace_back(ck.params.data(p).size());
    get_floats(payload, pos, ck.adam.m.back());
    get_floats(payload, pos, ck.adam.v.back());
  }
  if (pos != payload.size()) throw CheckpointError(path.string() + ": trailing bytes in payload");
  return ck;
}

fs::path checkpoint_name(std::int64_t step) { return "checkpoint_" + std::to_string(step) + ".gmnk"; }

namespace {

// Keeps metrics records up to and including `step`.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= step) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

}  // namespace

TrainRun run_training(const TrainConfig& config, const GlyphDataset& data, const fs::path& out_dir,
                      const std::optional<fs::path>& resume, TrainHooks hooks) {
  config.validate();
  fs::create_directories(out_dir);
  TrainRun run;
  run.metrics = out_dir / "metrics.jsonl";

  std::optional<TrainState> state;
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume, &config.model);
    if (ck.step % config.log_interval != 0)
      throw ContractError("resume needs a checkpoint on a log_interval boundary");
    state.emplace(restore(ck));
    truncate_metrics(run.metrics, ck.step);
  } else {
    state.emplace(config);
    std::ofstream(run.metrics, std::ios::trunc);
  }

  std::string last_good;
  auto save = [&](std::int64_t step) {
    const fs::path path = out_dir / checkpoint_name(step);
    try {
      save_checkpoint(path, snapshot(*state, config));
    } catch (const std::exception& e) {
      throw CheckpointError("step " + std::to_string(step) + ": " + e.what());
    }
    run.checkpoints.push_back(path);
    run.last = path;
    last_good = path.string();
  };
  if (state->step == 0) save(0);
  if (resume) last_good = resume->string();

  const auto start = std::chrono::steady_clock::now();
  double loss_sum = 0, entropy_sum = 0, norm_sum = 0;
  std::array<double, kParamGroupCount> group_sum{};
  int interval_steps = 0;
  const GMNConfig& cfg = config.model;
  while (state->step < config.total_steps) {
    std::vector<Episode> batch;
    for (int e = 0; e < config.batch_episodes; ++e)
      batch.push_back(sample_episode(data, cfg.episode_length, cfg.max_classes, state->data_rng));
    StepResult r;
    try {
      r = train_step(*state, config, batch);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + "; last good checkpoint: " +
                         (last_good.empty() ? "none" : last_good));
    }
    if (hooks.on_step) hooks.on_step(r, state->step);
    loss_sum += r.loss;
    entropy_sum += r.prior_entropy;
    norm_sum += r.grad_norm;
    for (int g = 0; g < kParamGroupCount; ++g) group_sum[g] += r.group_norms[g];
    ++interval_steps;

    const std::int64_t step = state->step;
    if (step % config.log_interval == 0 || step == config.total_steps) {
      nlohmann::json rec;
      rec["step"] = step;
      rec["loss"] = loss_sum / interval_steps;
      rec["per_t_elbo_ema"] = state->elbo_ema;
      rec["prior_entropy_mean"] = entropy_sum / interval_steps;
      rec["grad_norm_mean"] = norm_sum / interval_steps;
      nlohmann::json groups;
      for (int g = 0; g < kParamGroupCount; ++g) groups[to_string(ParamGroup(g))] = group_sum[g] / interval_steps;
      rec["group_grad_norm_mean"] = groups;
      if (config.deterministic)
        rec["wall_time"] = nullptr;
      else
        rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::ofstream out(run.metrics, std::ios::app);
      out << rec.dump() << "\n";
      if (!out) throw CheckpointError("step " + std::to_string(step) + ": cannot append to " + run.metrics.string());
      loss_sum = entropy_sum = norm_sum = 0;
      group_sum = {};
      interval_steps = 0;
    }
    if (step % config.checkpoint_interval == 0 || step == config.total_steps) save(step);
  }
  if (run.last.empty() && resume) run.last = *resume;
  return run;
}

}  // namespace gmn
