// Acceptance suite: one PASS/FAIL line per criterion. Desk models are
// trained on first use and cached under the work directory.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmn/data.hpp"
#include "gmn/eval.hpp"
#include "gmn/matching.hpp"
#include "gmn/train.hpp"
#include "model_support.hpp"
#include "op_catalogue.hpp"

using namespace gmn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Criteria listed in `expected` still print FAIL but only change the exit code when they pass.
struct Report {
  json results = json::array();
  std::vector<int> expected;
  int failed = 0, unexpected = 0;

  void add(int id, const std::string& title, const Outcome& o, double secs) {
    const bool known = std::find(expected.begin(), expected.end(), id) != expected.end();
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << title << ": " << o.detail << " (" << fmt(secs, 1)
              << " s)" << (known ? (o.pass ? " [expected to fail]" : " [expected]") : "") << std::endl;
    results.push_back({{"criterion", id},
                       {"title", title},
                       {"pass", o.pass},
                       {"expected_fail", known},
                       {"detail", o.detail},
                       {"seconds", secs}});
    if (!o.pass) ++failed;
    if (o.pass == known) ++unexpected;
  }
};

Outcome gradient_correctness() {
  double worst_op = 0;
  std::string worst_name;
  for (auto& op : testing::op_catalogue()) {
    const double e = testing::gradient_error(op.inputs, op.build);
    if (e > worst_op) worst_op = e, worst_name = op.name;
  }
  double worst_e2e = 0;
  int checked = 0;
  for (int pseudo = 0; pseudo <= 1; ++pseudo) {
    GMNConfig c = GMNConfig::tiny();
    c.pseudo_count = pseudo;
    GenerativeMatchingNetwork<double> model(c, 40 + pseudo);
    std::mt19937_64 jitter(99);
    std::normal_distribution<double> n(0.0, 0.05);
    for (ParamId p = 0; p < model.parameters().count(); ++p)
      for (double& v : model.mutable_parameters().data(p)) v += n(jitter);
    std::mt19937_64 rng(32);
    const auto images = testing::random_images(rng, c.episode_length);
    const auto eps = standard_normal_noise(rng, std::size_t(c.episode_length) * c.latent_dim);
    auto r = testing::model_gradient_error(model, [&](ad::Tape<double>& t, const GenerativeMatchingNetwork<double>& m) {
      return episode_elbo(t, m, images, std::span<const double>(eps)).total;
    });
    worst_e2e = std::max(worst_e2e, r.worst);
    checked += r.checked;
  }
  return {worst_op < 1e-3 && worst_e2e < 1e-2,
          "worst op rel err " + sci(worst_op) + " (" + worst_name + ", tol 1e-3); end-to-end " +
              sci(worst_e2e) + " over " + std::to_string(checked) + " params (tol 1e-2)"};
}

Outcome matching_invariants() {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(1, 12), dim(1, 9);
  int violations = 0;
  double worst_simplex = 0, worst_shift = 0, worst_perm = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng), m = dim(rng);
    const auto q = testing::random_vector(rng, m, -2, 2);
    auto keys = testing::random_vector(rng, n * m, -2, 2);
    ad::Tape<double> t(false);
    auto w0 = t.value(attention_weights(t, t.constant(q, {m}), t.constant(keys, {n, m})));
    const std::vector<double> w(w0.begin(), w0.end());
    double total = 0;
    for (double x : w) {
      if (x < 0) ++violations;
      total += x;
    }
    worst_simplex = std::max(worst_simplex, std::abs(total - 1));
    double qq = 0;
    for (double x : q) qq += x * x;
    if (qq > 1e-6) {
      const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k) keys[i * m + k] += c * q[k] / qq;
      auto s = t.value(attention_weights(t, t.constant(q, {m}), t.constant(keys, {n, m})));
      for (int i = 0; i < n; ++i) worst_shift = std::max(worst_shift, std::abs(s[i] - w[i]));
    }
  }

  // permutations, single elements and empty sets on small models
  std::uniform_int_distribution<int> set_size(1, 6);
  int single_bad = 0, empty_bad = 0;
  for (int pseudo = 0; pseudo <= 1; ++pseudo) {
    GMNConfig cfg = GMNConfig::tiny();
    cfg.pseudo_count = pseudo;
    const GenerativeMatchingNetwork<double> model(cfg, 4 + pseudo);
    for (int trial = 0; trial < 500; ++trial) {
      const int n = set_size(rng);
      auto images = testing::random_images(rng, n);
      const auto query = testing::random_vector(rng, cfg.feature_dim());
      auto run = [&](const std::vector<BinaryImage>& set_images, MatchSide side) {
        ad::Tape<double> t(false);
        EncodedEpisode ep = encode_episode(t, model, set_images);
        ConditioningSet set = augment_with_pseudo(model, ep.set);
        ad::Var qf = side == MatchSide::prior ? ad::Var{} : t.constant(query, {cfg.feature_dim()});
        MatchState s = full_context_match(t, model, side, qf, set, cfg.shared_steps);
        std::vector<double> out;
        for (ad::Var v : {s.r, s.h})
          for (double x : t.value(v)) out.push_back(x);
        if (set.elements() == 1)
          for (ad::Var wv : s.weights)
            if (t.scalar(wv) != 1.0) ++single_bad;
        return out;
      };
      auto perm = images;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (MatchSide side : {MatchSide::recognition, MatchSide::prior}) {
        const auto a = run(images, side), b = run(perm, side);
        for (std::size_t i = 0; i < a.size(); ++i) worst_perm = std::max(worst_perm, std::abs(a[i] - b[i]));
      }
    }
    ad::Tape<double> t(false);
    EncodedEpisode none = encode_episode(t, model, std::span<const BinaryImage>{});
    ConditioningSet set = augment_with_pseudo(model, none.set);
    const ad::Var qf = t.constant(testing::random_vector(rng, cfg.feature_dim()), {cfg.feature_dim()});
    if (pseudo == 1) {
      MatchState s = full_context_match(t, model, MatchSide::generative, qf, set, cfg.shared_steps);
      if (set.elements() != 1 || t.scalar(s.weights[0]) != 1.0) ++empty_bad;
    } else {
      try {
        full_context_match(t, model, MatchSide::recognition, qf, set, cfg.shared_steps);
        ++empty_bad;
      } catch (const ContractError&) {
      }
    }
  }
  const bool ok = violations == 0 && worst_simplex < 1e-12 && worst_shift < 1e-9 && worst_perm < 1e-5 &&
                  single_bad == 0 && empty_bad == 0;
  return {ok, "1000 kernels: |sum-1| " + sci(worst_simplex) + ", shift " + sci(worst_shift) +
                  "; 2000 permutations: " + sci(worst_perm) + " (tol 1e-5); single-element " +
                  std::to_string(single_bad) + " bad; empty-set " + std::to_string(empty_bad) + " bad"};
}

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (std::log(2 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

Outcome estimator_correctness() {
  // z ~ N(0, 1), x | z ~ N(z, 1): p(x) = N(0, 2), p(z | x) = N(x / 2, 1 / 2)
  const double x = 0.5, truth = -normal_logpdf(x, 0, 2);
  auto draw = [&](double qm, double qv) {
    return [=](std::mt19937_64& r) {
      const double z = qm + std::sqrt(qv) * std::normal_distribution<double>()(r);
      return ImportanceTerms{normal_logpdf(x, z, 1), normal_logpdf(z, 0, 1), normal_logpdf(z, qm, qv)};
    };
  };
  std::mt19937_64 rng(3);
  double worst_exact = 0;
  for (int i = 0; i < 100; ++i)
    worst_exact = std::max(worst_exact, std::abs(is_conditional_nll(draw(x / 2, 0.5), 1, rng) - truth));
  const double prior = std::abs(is_conditional_nll(draw(0, 1), 10000, rng) - truth);
  return {worst_exact < 1e-10 && prior < 0.01, "exact proposal S=1 err " + sci(worst_exact) +
                                                   " (tol 1e-10); prior proposal S=1e4 err " + fmt(prior, 5) +
                                                   " nats (tol 0.01)"};
}

struct Desk {
  std::string name;
  TrainConfig config;
};

TrainConfig desk_config(Variant variant, int pseudo, std::int64_t steps) {
  TrainConfig c;
  c.model = GMNConfig::reduced();
  c.model.variant = variant;
  c.model.pseudo_count = pseudo;
  c.batch_episodes = 16;
  c.total_steps = steps;
  c.checkpoint_interval = 100;
  c.log_interval = 50;
  c.adam.step_size = 3e-4;
  c.seed = 1;
  c.deterministic = true;
  return c;
}

std::optional<Checkpoint> try_load(const fs::path& p, const TrainConfig& expected) {
  try {
    Checkpoint ck = load_checkpoint(p, &expected.model);
    if (ck.config == expected) return ck;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

struct Trained {
  fs::path dir;
  double cpu_seconds = 0;
  fs::path at(std::int64_t step) const { return dir / checkpoint_name(step); }
};

Trained ensure_trained(const Desk& d, const GlyphDataset& data, const fs::path& work) {
  Trained out{work / d.name};
  const fs::path cpu_file = out.dir / "cpu_seconds.txt";
  double cpu = 0;
  if (fs::exists(cpu_file)) std::ifstream(cpu_file) >> cpu;
  const std::int64_t total = d.config.total_steps;
  if (try_load(out.at(total), d.config)) {
    out.cpu_seconds = cpu;
    return out;
  }
  std::optional<fs::path> resume;
  for (std::int64_t s = total - d.config.checkpoint_interval; s > 0; s -= d.config.checkpoint_interval)
    if (try_load(out.at(s), d.config)) {
      resume = out.at(s);
      break;
    }
  if (!resume) {
    fs::remove_all(out.dir);
    cpu = 0;
  }
  std::cerr << "training " << d.name << (resume ? " from " + resume->filename().string() : std::string()) << " to step "
            << total << std::endl;
  TrainHooks hooks;
  const std::clock_t c0 = std::clock();
  hooks.on_step = [&](const StepResult& r, std::int64_t step) {
    if (step % 100 == 0)
      std::cerr << "  " << d.name << " step " << step << " loss " << fmt(r.loss, 1) << " cpu "
                << fmt(cpu + double(std::clock() - c0) / CLOCKS_PER_SEC, 0) << " s" << std::endl;
    if (step % d.config.checkpoint_interval == 0)
      std::ofstream(cpu_file) << cpu + double(std::clock() - c0) / CLOCKS_PER_SEC;
  };
  run_training(d.config, data, out.dir, resume, hooks);
  out.cpu_seconds = cpu + double(std::clock() - c0) / CLOCKS_PER_SEC;
  std::ofstream(cpu_file) << out.cpu_seconds;
  return out;
}

GenerativeMatchingNetwork<float> load_model(const fs::path& p) { return restore(load_checkpoint(p)).model; }

std::string curve_text(const NLLCurve& c) {
  std::string s;
  for (std::size_t t = 0; t < c.mean.size(); ++t)
    if (!std::isnan(c.mean[t])) s += (s.empty() ? "" : " ") + std::string("t") + std::to_string(t) + "=" + fmt(c.mean[t], 1);
  return s;
}

constexpr int kEvalEpisodes = 100;
constexpr int kEvalSamples = 200;
constexpr int kClassifySamples = 50;

Outcome bound_consistency(const GlyphDataset& test, const GenerativeMatchingNetwork<float>& model) {
  std::mt19937_64 rng(4);
  const int length = model.config().episode_length;
  std::vector<double> diff;
  while (diff.size() < 200) {
    const Episode ep = sample_episode(test, length, 1, rng);
    const auto images = ep.images();
    const auto nll = episode_nll(model, images, kEvalSamples, rng);
    const auto elbo = episode_elbo_terms(model, images, rng);
    for (int t = 0; t < length && diff.size() < 200; ++t)
      if (!std::isnan(nll[t])) diff.push_back(-nll[t] - elbo[t]);
  }
  double mean = 0, ss = 0;
  for (double d : diff) mean += d;
  mean /= double(diff.size());
  for (double d : diff) ss += (d - mean) * (d - mean);
  const double se = std::sqrt(ss / double(diff.size() - 1) / double(diff.size()));
  return {mean > 3 * se, "mean IS log-lik - ELBO over 200 points " + fmt(mean, 3) + " nats, SE " + fmt(se, 3) +
                             " (need > 3 SE = " + fmt(3 * se, 3) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance", data_root, mnist_source;
  std::vector<int> only;
  std::int64_t steps_full = 2700, steps_matched = 1000, steps_no_pseudo = 1500;
  app.add_option("--work", work, "directory for desk models and results");
  app.add_option("--data-root", data_root, "dataset caches (default: synthetic Omniglot under --work)");
  app.add_option("--mnist-source", mnist_source, "MNIST idx directory, used when the data root has no MNIST cache");
  app.add_option("--only", only, "criteria to run");
  std::vector<int> expected_fail;
  app.add_option("--expected-fail", expected_fail, "criteria known to fail at desk scale");
  app.add_option("--steps-full", steps_full, "training steps of the full desk model");
  app.add_option("--steps-matched", steps_matched, "budget of the attention comparison");
  app.add_option("--steps-no-pseudo", steps_no_pseudo, "training steps of the no-pseudo-input model");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  Report report;
  report.expected = expected_fail;
  auto run = [&](int id, const std::string& title, auto&& fn) {
    if (!wanted(id)) return;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report.add(id, title, o, seconds_since(start));
  };
  // limits exclude desk training, so callers start the clock after it
  auto timed = [](Outcome o, Clock::time_point start, double limit) {
    const double s = seconds_since(start);
    if (s > limit) {
      o.pass = false;
      o.detail += "; runtime " + fmt(s, 0) + " s over the " + fmt(limit, 0) + " s limit";
    }
    return o;
  };

  run(1, "gradient correctness", [&] {
    const auto start = Clock::now();
    return timed(gradient_correctness(), start, 120);
  });
  run(2, "matching invariants", [&] {
    const auto start = Clock::now();
    return timed(matching_invariants(), start, 60);
  });
  run(3, "estimator correctness", [&] {
    const auto start = Clock::now();
    return timed(estimator_correctness(), start, 60);
  });

  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);
  fs::path root = data_root.empty() ? work_dir / "data" : fs::path(data_root);
  std::optional<GlyphDataset> train, test, mnist;
  auto omniglot = [&]() {
    if (!train) {
      if (!fs::exists(root / "omniglot_train.gmnc")) {
        if (!data_root.empty()) throw IngestError("missing cache " + (root / "omniglot_train.gmnc").string());
        std::cerr << "generating the synthetic Omniglot stand-in under " << root << std::endl;
        write_synthetic_omniglot(root / "synthetic_omniglot", 1);
        ingest_omniglot(root / "synthetic_omniglot", root);
      }
      train = read_cache(root / "omniglot_train.gmnc");
      test = read_cache(root / "omniglot_test.gmnc");
    }
  };

  const Desk full{"full", desk_config(Variant::full, 1, steps_full)};
  const Desk no_attention{"no_attention", desk_config(Variant::no_attention, 1, steps_matched)};
  const Desk no_pseudo{"no_pseudo", desk_config(Variant::full, 0, steps_no_pseudo)};
  std::optional<Trained> full_run, no_pseudo_run;
  auto full_model = [&]() {
    omniglot();
    if (!full_run) full_run = ensure_trained(full, *train, work_dir);
    return load_model(full_run->at(full.config.total_steps));
  };
  auto no_pseudo_model = [&](bool trained) {
    omniglot();
    if (!no_pseudo_run) no_pseudo_run = ensure_trained(no_pseudo, *train, work_dir);
    return load_model(no_pseudo_run->at(trained ? no_pseudo.config.total_steps : 0));
  };

  run(4, "bound consistency", [&] {
    const auto model = full_model();
    const auto start = Clock::now();
    return timed(bound_consistency(*test, model), start, 600);
  });

  run(5, "fast-adaptation trend", [&] {
    const auto model = full_model();
    std::mt19937_64 rng(5);
    const NLLCurve c = nll_curve(*test, model, 1, 10, kEvalEpisodes, kEvalSamples, rng);
    write_curve_csv(work_dir / "nll_full.csv", c);
    const bool cpu_ok = full_run->cpu_seconds <= 3600;
    const bool ok = c.mean[5] <= c.mean[0] - 3 && c.mean[9] <= c.mean[5] && cpu_ok;
    return Outcome{ok, curve_text(c) + "; need t5 <= t0-3 (" + fmt(c.mean[0] - c.mean[5], 1) + " drop) and t9 <= t5 (" +
                           fmt(c.mean[9] - c.mean[5], 1) + " diff, SE " + fmt(c.se[9], 1) +
                           "); training cpu " + fmt(full_run->cpu_seconds / 60, 1) + " min (limit 60)"};
  });

  run(6, "prior-entropy decline", [&] {
    const auto model = full_model();
    std::mt19937_64 rng(6);
    const EntropyCurve e = prior_entropy_curve(*test, model, 1, 10, kEvalEpisodes, rng);
    return Outcome{e.mean[9] < e.mean[0],
                   "mean prior entropy t0 " + fmt(e.mean[0], 2) + " -> t9 " + fmt(e.mean[9], 2) + " nats"};
  });

  run(7, "few-shot classification above chance", [&] {
    const auto trained = no_pseudo_model(true), untrained = no_pseudo_model(false);
    const auto start = Clock::now();
    std::mt19937_64 a(7), b(7);
    const FewShotResult r = few_shot_eval(*test, trained, 5, 1, 500, ClassifyMethod::likelihood, kClassifySamples, a);
    const FewShotResult u =
        few_shot_eval(*test, untrained, 5, 1, 500, ClassifyMethod::likelihood, kClassifySamples, b);
    const double chance_se = std::sqrt(0.2 * 0.8 / 500);
    const bool ok = r.accuracy >= 0.40 && std::abs(u.accuracy - 0.2) <= 3 * chance_se;
    return timed(Outcome{ok, "5-way 1-shot trained " + fmt(r.accuracy, 3) + " +- " + fmt(r.se, 3) + " (need >= 0.40); "
                                 "untrained " + fmt(u.accuracy, 3) + " (chance 0.2 +- 3x" + fmt(chance_se, 3) + ")"},
                 start, 900);
  });

  run(8, "no-attention variant ordering", [&] {
    omniglot();
    if (!full_run) full_run = ensure_trained(full, *train, work_dir);
    const Trained b = ensure_trained(no_attention, *train, work_dir);
    const auto fm = load_model(full_run->at(steps_matched)), bm = load_model(b.at(steps_matched));
    std::mt19937_64 r1(8), r2(8);
    const NLLCurve cf = nll_curve(*test, fm, 1, 10, kEvalEpisodes, kEvalSamples, r1);
    const NLLCurve cb = nll_curve(*test, bm, 1, 10, kEvalEpisodes, kEvalSamples, r2);
    const double gf = cf.mean[0] - cf.mean[9], gb = cb.mean[0] - cb.mean[9];
    return Outcome{gf > gb, "at step " + std::to_string(steps_matched) + " t0->t9 improvement full " + fmt(gf, 1) +
                                " vs no-attention " + fmt(gb, 1) + " nats [full " + curve_text(cf) +
                                "] [no-attention " + curve_text(cb) + "]"};
  });

  run(9, "MNIST transfer smoke", [&] {
    if (!mnist) {
      if (!fs::exists(root / "mnist_test.gmnc")) {
        if (mnist_source.empty()) throw IngestError("no MNIST cache in " + root.string() + " and no --mnist-source");
        ingest_mnist_test(mnist_source, root);
      }
      mnist = read_cache(root / "mnist_test.gmnc");
    }
    const auto with = full_model(), without = no_pseudo_model(true);
    std::mt19937_64 r1(9), r2(9);
    const NLLCurve cw = mnist_transfer_eval(*mnist, with, 1, 10, kEvalEpisodes, kEvalSamples, r1);
    const NLLCurve cn = mnist_transfer_eval(*mnist, without, 1, 10, kEvalEpisodes, kEvalSamples, r2);
    write_curve_csv(work_dir / "nll_mnist_full.csv", cw);
    write_curve_csv(work_dir / "nll_mnist_no_pseudo.csv", cn);
    bool finite = true;
    for (int t = 0; t < 10; ++t) finite = finite && std::isfinite(cw.mean[t]) && (t == 0 || std::isfinite(cn.mean[t]));
    // without a pseudo-input the first defined conditional is t = 1
    const bool ok = finite && cn.mean[5] <= cn.mean[1];
    return Outcome{ok, std::string(finite ? "all estimates finite" : "non-finite estimates") + "; no-pseudo " +
                           curve_text(cn) + " (need t5 <= t1); with pseudo-input " + curve_text(cw)};
  });

  run(10, "reproducibility", [&] {
    const fs::path dir = work_dir / "repro";
    fs::remove_all(dir);
    TrainConfig c;
    c.model = GMNConfig::tiny();
    c.batch_episodes = 3;
    c.total_steps = 6;
    c.checkpoint_interval = 3;
    c.log_interval = 1;
    c.seed = 10;
    const GlyphDataset toy = testing::toy_dataset(10, 8, 10);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const TrainRun a = run_training(c, toy, dir / "a"), b = run_training(c, toy, dir / "b");
    const bool logs = slurp(a.metrics) == slurp(b.metrics) && slurp(a.last) == slurp(b.last);

    const auto model = load_model(a.last);
    const int threads = omp_get_max_threads();
    std::vector<std::string> csvs;
    for (int run = 0; run < 3; ++run) {
      omp_set_num_threads(run == 2 ? 3 : threads);
      std::mt19937_64 rng(11);
      const fs::path p = dir / ("curve_" + std::to_string(run) + ".csv");
      write_curve_csv(p, nll_curve(toy, model, 2, 3, 8, 5, rng));
      csvs.push_back(slurp(p));
    }
    omp_set_num_threads(threads);
    const bool curves = csvs[0] == csvs[1] && csvs[0] == csvs[2];

    TrainState s(c);
    std::mt19937_64 er(12);
    std::vector<Episode> batch;
    for (int e = 0; e < c.batch_episodes; ++e) batch.push_back(sample_episode(toy, 3, 1, er));
    train_step(s, c, batch);
    save_checkpoint(dir / "round.gmnk", snapshot(s, c));
    const TrainState back = restore(load_checkpoint(dir / "round.gmnk"));
    const auto images = batch[0].images();
    const auto noise = standard_normal_noise(er, 3 * std::size_t(c.model.latent_dim));
    const std::vector<float> eps(noise.begin(), noise.end());
    auto bound = [&](const GenerativeMatchingNetwork<float>& m) {
      ad::Tape<float> t(false);
      return t.scalar(episode_elbo(t, m, images, std::span<const float>(eps)).total);
    };
    const float before = bound(s.model), after = bound(back.model);
    const bool round = before == after;
    return Outcome{logs && curves && round,
                   std::string("metrics and checkpoints ") + (logs ? "identical" : "DIFFER") + "; curve CSVs " +
                       (curves ? "identical across runs and thread counts" : "DIFFER") + "; episode_elbo " +
                       fmt(before, 4) + (round ? " == " : " != ") + fmt(after, 4) + " after round trip"};
  });

  std::ofstream(work_dir / "acceptance.json") << report.results.dump(2) << "\n";
  std::cout << (report.failed == 0 ? "all criteria passed" : std::to_string(report.failed) + " criteria failed");
  if (!report.expected.empty()) std::cout << ", " << report.unexpected << " unexpected outcomes";
  std::cout << std::endl;
  return report.unexpected == 0 ? 0 : 1;
}
