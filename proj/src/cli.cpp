#include "gmn/cli.hpp"

#include <openssl/evp.h>
#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "gmn/errors.hpp"
#include "gmn/eval.hpp"

namespace gmn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

GMNConfig preset_config(const std::string& name) {
  if (name == "paper") return GMNConfig::paper();
  if (name == "reduced") return GMNConfig::reduced();
  if (name == "tiny") return GMNConfig::tiny();
  throw ConfigError("unknown preset '" + name + "' (expected paper, reduced or tiny)");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IngestError(path.string() + ": cannot write");
}

}  // namespace

TrainConfig resolve_train_config(const json& file, const std::string& preset) {
  if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
  TrainConfig config;
  config.model = preset_config(preset);
  json known;
  to_json(known, config);
  for (const auto& [key, value] : file.items())
    if (key != "preset" && !known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  try {
    from_json(file, config);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return config;
}

TrainConfig load_train_config(const fs::path& path) {
  json file;
  try {
    file = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return resolve_train_config(file, file.value("preset", std::string("paper")));
}

std::string git_blob_hash(const fs::path& path) {
  const std::string content = read_file(path);
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

struct Common {
  std::string out;
  std::string data_root;
  std::uint64_t seed = 1;
  int workers = 0;
};

struct EvalOpts {
  std::string checkpoint;
  int ctest = 1;
  int episodes = 1000;
  int samples = 1000;
  int length = 0;  // 0: the model's episode length
  std::string split = "test";
};

fs::path data_root(const Common& c) { return c.data_root.empty() ? default_cache_root() : fs::path(c.data_root); }

GlyphDataset load_omniglot(const Common& c, const std::string& split) {
  if (split != "train" && split != "test") throw ConfigError("--split must be train or test");
  const fs::path path = data_root(c) / ("omniglot_" + split + ".gmnc");
  if (!fs::exists(path))
    throw IngestError("missing cache " + path.string() +
                      "; run `gmn ingest-omniglot --source <omniglot dir>` (or --synthetic) first");
  return read_cache(path);
}

GlyphDataset load_mnist(const Common& c) {
  const fs::path path = data_root(c) / "mnist_test.gmnc";
  if (!fs::exists(path))
    throw IngestError("missing cache " + path.string() + "; run `gmn ingest-mnist --source <mnist dir>` first");
  return read_cache(path);
}

// Collects artifacts and writes run_manifest.json into the run directory.
class Manifest {
 public:
  Manifest(std::string command, const Common& common) : out_(common.out) {
    doc_["command"] = std::move(command);
    doc_["seed"] = common.seed;
    doc_["data_root"] = data_root(common).string();
    doc_["artifacts"] = json::array();
  }

  json& operator[](const char* key) { return doc_[key]; }

  void checkpoint(const fs::path& path) {
    doc_["checkpoint"] = {{"path", path.string()}, {"git_blob_sha1", git_blob_hash(path)}};
  }

  void artifact(const fs::path& path) {
    doc_["artifacts"].push_back(
        {{"path", fs::relative(path, out_).generic_string()}, {"git_blob_sha1", git_blob_hash(path)}});
  }

  void write() const { write_text(out_ / "run_manifest.json", doc_.dump(2) + "\n"); }

 private:
  fs::path out_;
  json doc_;
};

Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw CheckpointError(path + ": no such checkpoint");
  return load_checkpoint(path);
}

json eval_json(const EvalOpts& e, int length) {
  return {{"checkpoint", e.checkpoint}, {"ctest", e.ctest},  {"episodes", e.episodes},
          {"is_samples", e.samples},    {"length", length}, {"split", e.split}};
}

void check_eval(const EvalOpts& e) {
  if (e.ctest < 1) throw ConfigError("--ctest must be >= 1");
  if (e.episodes < 1) throw ConfigError("--episodes must be >= 1");
  if (e.samples < 1) throw ConfigError("--is-samples must be >= 1");
  if (e.length < 0) throw ConfigError("--length must be >= 1");
}

int length_for(const EvalOpts& e, const Checkpoint& ck) {
  return e.length > 0 ? e.length : ck.config.model.episode_length;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_rows_csv(const fs::path& path, std::size_t length,
                    const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::ostringstream out;
  out << "statistic";
  for (std::size_t t = 0; t < length; ++t) out << ",t=" << t;
  out << "\n";
  for (const auto& [name, values] : rows) {
    out << name;
    for (double v : values) out << "," << number(v);
    out << "\n";
  }
  write_text(path, out.str());
}

json nullable(const std::vector<double>& xs) {
  json arr = json::array();
  for (double x : xs) arr.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return arr;
}

int cmd_ingest_omniglot(const Common& c, const std::string& source, bool synthetic, std::uint64_t synth_seed) {
  const fs::path root = data_root(c);
  fs::path tree = source;
  if (synthetic) {
    if (tree.empty()) tree = root / "synthetic_omniglot";
    if (!fs::exists(tree / "images_background")) write_synthetic_omniglot(tree, synth_seed);
  } else if (tree.empty()) {
    throw ConfigError("ingest-omniglot needs --source <dir> or --synthetic");
  }
  const IngestResult r = ingest_omniglot(tree, root);
  Manifest m("ingest-omniglot", c);
  m["source"] = tree.string();
  m["synthetic"] = synthetic;
  if (synthetic) m["synthetic_seed"] = synth_seed;
  m["unchanged"] = r.unchanged;
  m["caches"] = {{"train", {{"path", r.train_cache.string()}, {"git_blob_sha1", git_blob_hash(r.train_cache)}}},
                 {"test", {{"path", r.test_cache.string()}, {"git_blob_sha1", git_blob_hash(r.test_cache)}}}};
  m.write();
  std::cout << (r.unchanged ? "caches unchanged: " : "wrote ") << r.train_cache.string() << ", "
            << r.test_cache.string() << "\n";
  return kExitOk;
}

int cmd_ingest_mnist(const Common& c, const std::string& source, std::uint64_t bin_seed) {
  const IngestResult r = ingest_mnist_test(source, data_root(c), bin_seed);
  Manifest m("ingest-mnist", c);
  m["source"] = source;
  m["binarization_seed"] = bin_seed;
  m["unchanged"] = r.unchanged;
  m["caches"] = {{"test", {{"path", r.test_cache.string()}, {"git_blob_sha1", git_blob_hash(r.test_cache)}}}};
  m.write();
  std::cout << (r.unchanged ? "cache unchanged: " : "wrote ") << r.test_cache.string() << "\n";
  return kExitOk;
}

struct TrainFlags {
  std::string config;
  std::string preset;
  std::string resume;
  std::optional<std::int64_t> steps, checkpoint_interval, log_interval;
  std::optional<int> batch;
  std::optional<double> lr;
  std::optional<bool> deterministic;
  bool seed_given = false;
};

int cmd_train(const Common& c, const TrainFlags& f) {
  json file = json::object();
  if (!f.config.empty()) {
    try {
      file = json::parse(read_file(f.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
  }
  const std::string preset = !f.preset.empty() ? f.preset : file.is_object() ? file.value("preset", "paper") : "paper";
  TrainConfig config = resolve_train_config(file, preset);
  if (f.seed_given) config.seed = c.seed;
  if (f.steps) config.total_steps = *f.steps;
  if (f.checkpoint_interval) config.checkpoint_interval = *f.checkpoint_interval;
  if (f.log_interval) config.log_interval = *f.log_interval;
  if (f.batch) config.batch_episodes = *f.batch;
  if (f.lr) config.adam.step_size = *f.lr;
  if (f.deterministic) config.deterministic = *f.deterministic;
  config.validate();

  std::optional<fs::path> resume;
  if (!f.resume.empty()) {
    if (!fs::exists(f.resume)) throw CheckpointError(f.resume + ": no such checkpoint");
    resume = f.resume;
  }
  const GlyphDataset data = load_omniglot(c, "train");
  TrainHooks hooks;
  hooks.on_step = [&](const StepResult& r, std::int64_t step) {
    if (step % config.log_interval == 0)
      std::cout << "step " << step << " loss " << r.loss << " grad_norm " << r.grad_norm << std::endl;
  };
  const TrainRun run = run_training(config, data, c.out, resume, hooks);

  Manifest m("train", c);
  json resolved;
  to_json(resolved, config);
  m["config"] = resolved;
  m["preset"] = preset;
  if (resume) m["resumed_from"] = resume->string();
  m.checkpoint(run.last);
  for (const auto& ck : run.checkpoints) m.artifact(ck);
  m.artifact(run.metrics);
  m.write();
  return kExitOk;
}

int cmd_eval_nll(const Common& c, const EvalOpts& e, bool mnist) {
  check_eval(e);
  const Checkpoint ck = open_checkpoint(e.checkpoint);
  const int length = length_for(e, ck);
  const GlyphDataset data = mnist ? load_mnist(c) : load_omniglot(c, e.split);
  const TrainState state = restore(ck);
  std::mt19937_64 rng(c.seed);
  const NLLCurve curve = nll_curve(data, state.model, e.ctest, length, e.episodes, e.samples, rng);
  const std::string stem = mnist ? "nll_mnist" : "nll_" + e.split;
  const fs::path csv = fs::path(c.out) / (stem + ".csv");
  const fs::path js = fs::path(c.out) / (stem + ".json");
  write_curve_csv(csv, curve);
  write_json(js, to_json(curve));

  Manifest m(mnist ? "eval-mnist" : "eval-nll", c);
  m["eval"] = eval_json(e, length);
  if (mnist) m["eval"]["split"] = "mnist_test";
  m.checkpoint(e.checkpoint);
  m.artifact(csv);
  m.artifact(js);
  m.write();
  for (std::size_t t = 0; t < curve.mean.size(); ++t)
    std::cout << "t=" << t << " nll " << number(curve.mean[t]) << " se " << number(curve.se[t]) << "\n";
  return kExitOk;
}

int cmd_classify(const Common& c, const EvalOpts& e, int ways, int shots, int trials, const std::string& method) {
  check_eval(e);
  if (ways < 1 || shots < 1 || trials < 1) throw ConfigError("--ways, --shots and --trials must be >= 1");
  const ClassifyMethod how = parse_classify_method(method);
  const Checkpoint ck = open_checkpoint(e.checkpoint);
  const GlyphDataset data = load_omniglot(c, e.split);
  const TrainState state = restore(ck);
  std::mt19937_64 rng(c.seed);
  const FewShotResult r = few_shot_eval(data, state.model, ways, shots, trials, how, e.samples, rng);
  const fs::path js = fs::path(c.out) / "classify.json";
  write_json(js, {{"ways", ways},
                  {"shots", shots},
                  {"trials", r.trials},
                  {"method", to_string(how)},
                  {"is_samples", e.samples},
                  {"accuracy", r.accuracy},
                  {"se", r.se}});
  Manifest m("classify", c);
  m["eval"] = {{"checkpoint", e.checkpoint}, {"split", e.split}, {"ways", ways},          {"shots", shots},
               {"trials", trials},           {"method", method},  {"is_samples", e.samples}};
  m.checkpoint(e.checkpoint);
  m.artifact(js);
  m.write();
  std::cout << ways << "-way " << shots << "-shot " << method << " accuracy " << r.accuracy << " se " << r.se << "\n";
  return kExitOk;
}

int cmd_sample(const Common& c, const EvalOpts& e, bool grid, int per_row, bool probabilities) {
  check_eval(e);
  if (per_row < 1) throw ConfigError("--samples-per-row must be >= 1");
  const Checkpoint ck = open_checkpoint(e.checkpoint);
  const int length = length_for(e, ck);
  const GlyphDataset data = load_omniglot(c, e.split);
  const TrainState state = restore(ck);
  std::mt19937_64 rng(c.seed);
  const Episode episode = sample_episode(data, length, e.ctest, rng);
  const auto images = episode.images();
  Manifest m("sample", c);
  m["eval"] = {{"checkpoint", e.checkpoint}, {"split", e.split},        {"ctest", e.ctest},
               {"length", length},           {"samples_per_row", per_row}, {"probabilities", probabilities}};
  m["episode_class_ids"] = episode.labels();
  m.checkpoint(e.checkpoint);
  if (grid) {
    const fs::path png = fs::path(c.out) / "samples_grid.png";
    write_png_gray(png, sample_grid(state.model, images, per_row, probabilities, rng));
    m.artifact(png);
  } else {
    const int first = first_defined_step(state.model.config());
    for (int t = first; t < length; ++t)
      for (int s = 0; s < per_row; ++s) {
        const GeneratedImage g = generate(state.model, std::span(images).subspan(0, t), rng);
        GrayImage out{kImageSide, kImageSide, std::vector<std::uint8_t>(kImagePixels)};
        for (int i = 0; i < kImagePixels; ++i) {
          const double ink = probabilities ? g.probabilities[i] : double(g.sample.at(i / kImageSide, i % kImageSide));
          out.pixels[i] = std::uint8_t(std::lround(255.0 * (1.0 - ink)));
        }
        const fs::path png = fs::path(c.out) / ("sample_t" + std::to_string(t) + "_s" + std::to_string(s) + ".png");
        write_png_gray(png, out);
        m.artifact(png);
      }
  }
  m.write();
  return kExitOk;
}

int cmd_diagnostics(const Common& c, const EvalOpts& e) {
  check_eval(e);
  const Checkpoint ck = open_checkpoint(e.checkpoint);
  const int length = length_for(e, ck);
  const GlyphDataset data = load_omniglot(c, e.split);
  const TrainState state = restore(ck);
  std::mt19937_64 rng(c.seed);
  const EntropyCurve entropy = prior_entropy_curve(data, state.model, e.ctest, length, e.episodes, rng);

  const std::uint64_t base = rng();
  std::vector<std::vector<double>> terms(e.episodes);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < e.episodes; ++i) {
    std::mt19937_64 local = derive_rng(base, std::uint64_t(i));
    const Episode ep = sample_episode(data, length, e.ctest, local);
    terms[i] = episode_elbo_terms(state.model, ep.images(), local);
  }
  std::vector<double> elbo_mean(length), elbo_se(length);
  for (int t = 0; t < length; ++t) {
    double sum = 0, ss = 0;
    int n = 0;
    for (const auto& v : terms)
      if (!std::isnan(v[t])) sum += v[t], ++n;
    const double mean = n ? sum / n : NAN;
    for (const auto& v : terms)
      if (!std::isnan(v[t])) ss += (v[t] - mean) * (v[t] - mean);
    elbo_mean[t] = mean;
    elbo_se[t] = n > 1 ? std::sqrt(ss / (n - 1) / n) : NAN;
  }
  const fs::path ent_csv = fs::path(c.out) / "prior_entropy.csv";
  const fs::path elbo_csv = fs::path(c.out) / "elbo_terms.csv";
  const fs::path js = fs::path(c.out) / "diagnostics.json";
  write_rows_csv(ent_csv, length, {{"mean_entropy", entropy.mean}, {"se", entropy.se}});
  write_rows_csv(elbo_csv, length, {{"mean_elbo", elbo_mean}, {"se", elbo_se}});
  write_json(js, {{"prior_entropy", {{"mean", nullable(entropy.mean)}, {"se", nullable(entropy.se)}}},
                  {"elbo_terms", {{"mean", nullable(elbo_mean)}, {"se", nullable(elbo_se)}}},
                  {"episodes", e.episodes},
                  {"ctest", e.ctest}});
  Manifest m("diagnostics", c);
  m["eval"] = eval_json(e, length);
  m["eval"].erase("is_samples");
  m.checkpoint(e.checkpoint);
  m.artifact(ent_csv);
  m.artifact(elbo_csv);
  m.artifact(js);
  m.write();
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
  auto* out = sub->add_option("--out", c.out, "run directory for outputs and the manifest");
  if (needs_out) out->required();
  sub->add_option("--data-root", c.data_root, "dataset cache directory (default: $GMN_DATA_ROOT or data/cache)");
  sub->add_option("--seed", c.seed, "base seed");
  sub->add_option("--workers", c.workers, "parallel episode workers (default: all cores)")->check(CLI::NonNegativeNumber);
}

void add_eval(CLI::App* sub, EvalOpts& e) {
  sub->add_option("--checkpoint", e.checkpoint, "checkpoint file")->required();
  sub->add_option("--ctest", e.ctest, "classes per episode");
  sub->add_option("--episodes", e.episodes, "evaluation episodes");
  sub->add_option("--is-samples", e.samples, "importance samples per estimate");
  sub->add_option("--length", e.length, "episode length (default: the model's)");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Generative matching networks"};
  app.require_subcommand(1);
  Common common;
  EvalOpts eval;

  auto* ingest_omni = app.add_subcommand("ingest-omniglot", "ingest the Omniglot tree into the cache");
  std::string source;
  bool synthetic = false;
  std::uint64_t synth_seed = 1;
  add_common(ingest_omni, common, false);
  ingest_omni->add_option("--source", source, "directory holding images_background and images_evaluation");
  ingest_omni->add_flag("--synthetic", synthetic, "generate a procedural stand-in tree (at --source if given)");
  ingest_omni->add_option("--synthetic-seed", synth_seed, "seed of the procedural tree");

  auto* ingest_mn = app.add_subcommand("ingest-mnist", "binarize the MNIST test set into the cache");
  std::uint64_t bin_seed = kMnistBinarizationSeed;
  add_common(ingest_mn, common, false);
  ingest_mn->add_option("--source", source, "directory with t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte")
      ->required();
  ingest_mn->add_option("--binarization-seed", bin_seed, "seed of the Bernoulli binarization");

  auto* train = app.add_subcommand("train", "episodic training");
  TrainFlags tf;
  bool det = false, nondet = false;
  add_common(train, common);
  train->add_option("--config", tf.config, "JSON config with flat keys");
  train->add_option("--preset", tf.preset, "paper, reduced or tiny (default: paper)");
  train->add_option("--steps", tf.steps, "total optimizer steps");
  train->add_option("--batch", tf.batch, "episodes per step");
  train->add_option("--lr", tf.lr, "Adam step size");
  train->add_option("--checkpoint-interval", tf.checkpoint_interval, "steps between checkpoints");
  train->add_option("--log-interval", tf.log_interval, "steps between metrics records");
  train->add_option("--resume", tf.resume, "continue from this checkpoint");
  auto* det_flag = train->add_flag("--deterministic", det, "bit-reproducible mode");
  train->add_flag("--nondeterministic", nondet, "record wall time")->excludes(det_flag);

  auto* eval_nll = app.add_subcommand("eval-nll", "importance-sampled conditional NLL curve on Omniglot");
  add_common(eval_nll, common);
  add_eval(eval_nll, eval);
  eval_nll->add_option("--split", eval.split, "train or test");

  auto* eval_mnist = app.add_subcommand("eval-mnist", "conditional NLL curve on MNIST episodes");
  add_common(eval_mnist, common);
  add_eval(eval_mnist, eval);

  auto* classify_cmd = app.add_subcommand("classify", "few-shot classification on Omniglot");
  int ways = 5, shots = 1, trials = 500;
  std::string method = "likelihood";
  eval.samples = 1000;
  add_common(classify_cmd, common);
  classify_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  classify_cmd->add_option("--ways", ways, "classes per task");
  classify_cmd->add_option("--shots", shots, "labeled examples per class");
  classify_cmd->add_option("--trials", trials, "tasks");
  classify_cmd->add_option("--method", method, "likelihood or cosine");
  classify_cmd->add_option("--is-samples", eval.samples, "importance samples per class score");
  classify_cmd->add_option("--split", eval.split, "train or test");

  auto* sample_cmd = app.add_subcommand("sample", "conditional samples");
  bool grid = false, probabilities = false;
  int per_row = 5;
  add_common(sample_cmd, common);
  sample_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  sample_cmd->add_option("--episode-from", eval.split, "split the conditioning episode comes from");
  sample_cmd->add_option("--ctest", eval.ctest, "classes in the conditioning episode");
  sample_cmd->add_option("--length", eval.length, "episode length (default: the model's)");
  sample_cmd->add_option("--samples-per-row", per_row, "samples for each conditioning prefix");
  sample_cmd->add_flag("--grid", grid, "one PNG with data in column 0 and samples per prefix in each row");
  sample_cmd->add_flag("--probabilities", probabilities, "draw Bernoulli means instead of binary samples");

  auto* diag = app.add_subcommand("diagnostics", "prior entropy and per-t bound curves");
  add_common(diag, common);
  diag->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  diag->add_option("--ctest", eval.ctest, "classes per episode");
  diag->add_option("--episodes", eval.episodes, "episodes");
  diag->add_option("--length", eval.length, "episode length (default: the model's)");
  diag->add_option("--split", eval.split, "train or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (common.workers > 0) omp_set_num_threads(common.workers);
    if (!common.out.empty()) fs::create_directories(common.out);
    else common.out = data_root(common).string();
    if (*ingest_omni) return cmd_ingest_omniglot(common, source, synthetic, synth_seed);
    if (*ingest_mn) return cmd_ingest_mnist(common, source, bin_seed);
    if (*train) {
      tf.seed_given = train->count("--seed") > 0;
      if (det) tf.deterministic = true;
      if (nondet) tf.deterministic = false;
      return cmd_train(common, tf);
    }
    if (*eval_nll) return cmd_eval_nll(common, eval, false);
    if (*eval_mnist) return cmd_eval_nll(common, eval, true);
    if (*classify_cmd) return cmd_classify(common, eval, ways, shots, trials, method);
    if (*sample_cmd) return cmd_sample(common, eval, grid, per_row, probabilities);
    if (*diag) return cmd_diagnostics(common, eval);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IngestError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace gmn
