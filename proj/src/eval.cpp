#include "gmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "gmn/errors.hpp"

namespace gmn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MeanSe {
  double mean = kNaN, se = kNaN;
  int count = 0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  double sum = 0;
  for (double x : xs)
    if (!std::isnan(x)) {
      sum += x;
      ++out.count;
    }
  if (out.count == 0) return out;
  out.mean = sum / out.count;
  double ss = 0;
  for (double x : xs)
    if (!std::isnan(x)) ss += (x - out.mean) * (x - out.mean);
  out.se = out.count > 1 ? std::sqrt(ss / (out.count - 1) / out.count) : 0.0;
  return out;
}

}  // namespace

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw ContractError("log_mean_exp of no values");
  const double mx = *std::max_element(values.begin(), values.end());
  if (std::isinf(mx)) return mx;
  double acc = 0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc / double(values.size()));
}

double importance_nll(std::span<const ImportanceTerms> draws) {
  std::vector<double> w;
  w.reserve(draws.size());
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto& d = draws[s];
    const char* bad = !std::isfinite(d.log_likelihood) ? "log-likelihood"
                      : !std::isfinite(d.log_prior)    ? "log-prior"
                      : !std::isfinite(d.log_proposal) ? "log-proposal"
                                                       : nullptr;
    if (bad) throw NumericError(std::string("importance sample ") + std::to_string(s) + ": non-finite " + bad);
    w.push_back(d.log_weight());
  }
  return -log_mean_exp(w);
}

double is_conditional_nll(const std::function<ImportanceTerms(std::mt19937_64&)>& draw, int samples,
                          std::mt19937_64& rng) {
  if (samples < 1) throw ContractError("importance sampling needs S >= 1");
  std::vector<ImportanceTerms> draws;
  draws.reserve(samples);
  for (int s = 0; s < samples; ++s) draws.push_back(draw(rng));
  return importance_nll(draws);
}

namespace {

// Estimate for query features xf against a prepared set; the tape is
// rewound after every draw.
double nll_on_tape(ad::Tape<float>& tape, const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
                   ad::Var xf, const ConditioningSet& set, std::span<const double> noise) {
  const int dz = model.config().latent_dim;
  if (noise.empty() || noise.size() % dz != 0)
    throw ContractError("importance noise must hold whole latent rows");
  const DiagGaussian q = read_gaussian(tape, recognition_params(tape, model, xf, set));
  const DiagGaussian p = read_gaussian(tape, prior_params(tape, model, set));
  const auto mark = tape.mark();
  const std::size_t samples = noise.size() / dz;
  std::vector<ImportanceTerms> draws(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const LatentSample z = reparam_sample(q, noise.subspan(s * dz, dz));
    const std::vector<float> zf(z.z.begin(), z.z.end());
    ad::Var zv = tape.constant(zf, {dz});
    draws[s].log_likelihood = double(tape.scalar(conditional_loglik(tape, model, x, zv, set)));
    draws[s].log_prior = diag_gaussian_logpdf(z.z, p);
    draws[s].log_proposal = diag_gaussian_logpdf(z.z, q);
    tape.rewind(mark);
  }
  return importance_nll(draws);
}

}  // namespace

double is_conditional_nll(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
                          std::span<const BinaryImage> conditioning, std::span<const double> noise) {
  ad::Tape<float> tape(false);
  EncodedEpisode ep = encode_episode(tape, model, conditioning);
  ad::Var xf = encode_image(tape, model, image_input(tape, x));
  return nll_on_tape(tape, model, x, xf, ep.set, noise);
}

double is_conditional_nll(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
                          std::span<const BinaryImage> conditioning, int samples, std::mt19937_64& rng) {
  if (samples < 1) throw ContractError("importance sampling needs S >= 1");
  const auto noise = standard_normal_noise(rng, std::size_t(samples) * model.config().latent_dim);
  return is_conditional_nll(model, x, conditioning, noise);
}

std::vector<double> episode_nll(const GenerativeMatchingNetwork<float>& model, std::span<const BinaryImage> images,
                                int samples, std::mt19937_64& rng) {
  if (samples < 1) throw ContractError("importance sampling needs S >= 1");
  ad::Tape<float> tape(false);
  EncodedEpisode ep = encode_episode(tape, model, images);
  const int first = first_defined_step(model.config());
  std::vector<double> out(images.size(), kNaN);
  for (int t = first; t < int(images.size()); ++t) {
    const auto noise = standard_normal_noise(rng, std::size_t(samples) * model.config().latent_dim);
    const auto mark = tape.mark();
    ConditioningSet set = prefix(tape, ep.set, t);
    out[t] = nll_on_tape(tape, model, images[t], ep.image_features[t], set, noise);
    tape.rewind(mark);
  }
  return out;
}

std::vector<double> episode_elbo_terms(const GenerativeMatchingNetwork<float>& model,
                                       std::span<const BinaryImage> images, std::mt19937_64& rng) {
  ad::Tape<float> tape(false);
  const auto eps = standard_normal_noise(rng, images.size() * model.config().latent_dim);
  const std::vector<float> epsf(eps.begin(), eps.end());
  EpisodeElbo el = episode_elbo(tape, model, images, epsf);
  std::vector<double> out(images.size(), kNaN);
  for (std::size_t i = 0; i < el.terms.size(); ++i) out[el.first + i] = tape.scalar(el.terms[i].value);
  return out;
}

NLLCurve nll_curve(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int classes, int length,
                   int episodes, int samples, std::mt19937_64& rng) {
  if (episodes < 1 || length < 1) throw ContractError("nll_curve needs episodes >= 1 and length >= 1");
  const std::uint64_t base = rng();
  std::vector<std::vector<double>> per_episode(episodes);
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < episodes; ++e) {
    std::mt19937_64 local = derive_rng(base, std::uint64_t(e));
    const Episode ep = sample_episode(data, length, classes, local);
    per_episode[e] = episode_nll(model, ep.images(), samples, local);
  }
  NLLCurve curve;
  curve.episodes = episodes;
  curve.samples = samples;
  curve.classes = classes;
  for (int t = 0; t < length; ++t) {
    std::vector<double> column;
    for (const auto& v : per_episode) column.push_back(v[t]);
    const MeanSe m = mean_se(column);
    curve.mean.push_back(m.mean);
    curve.se.push_back(m.se);
    curve.count.push_back(m.count);
  }
  return curve;
}

const char* to_string(ClassifyMethod m) { return m == ClassifyMethod::likelihood ? "likelihood" : "cosine"; }

ClassifyMethod parse_classify_method(const std::string& s) {
  if (s == "likelihood") return ClassifyMethod::likelihood;
  if (s == "cosine") return ClassifyMethod::cosine;
  throw ConfigError("unknown classification method '" + s + "' (expected likelihood or cosine)");
}

std::vector<std::vector<double>> posterior_means(const GenerativeMatchingNetwork<float>& model,
                                                 std::span<const BinaryImage> images,
                                                 std::span<const BinaryImage> pool) {
  ad::Tape<float> tape(false);
  EncodedEpisode ep = encode_episode(tape, model, pool);
  std::vector<std::vector<double>> out;
  for (const BinaryImage& y : images) {
    const auto mark = tape.mark();
    ad::Var yf = encode_image(tape, model, image_input(tape, y));
    out.push_back(read_gaussian(tape, recognition_params(tape, model, yf, ep.set)).mean);
    tape.rewind(mark);
  }
  return out;
}

int nearest_by_cosine(std::span<const double> query, const std::vector<std::vector<double>>& exemplars,
                      std::span<const int> exemplar_class) {
  auto norm = [](std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double qn = norm(query);
  int best_class = -1;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    double dot = 0;
    for (std::size_t k = 0; k < query.size(); ++k) dot += query[k] * exemplars[i][k];
    const double denom = qn * norm(exemplars[i]);
    const double sim = denom > 0 ? dot / denom : 0.0;
    if (sim > best || (sim == best && exemplar_class[i] < best_class)) {
      best = sim;
      best_class = exemplar_class[i];
    }
  }
  return best_class;
}

int classify(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
             const std::vector<std::vector<BinaryImage>>& labeled, ClassifyMethod method, int samples,
             std::mt19937_64& rng) {
  if (labeled.empty()) throw ContractError("classify needs at least one class");
  for (const auto& set : labeled)
    if (set.empty()) throw ContractError("classify: every class needs labeled examples");
  if (method == ClassifyMethod::likelihood) {
    if (samples < 1) throw ContractError("importance sampling needs S >= 1");
    // The same proposal noise scores every class.
    const auto noise = standard_normal_noise(rng, std::size_t(samples) * model.config().latent_dim);
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < labeled.size(); ++c) {
      const double score = -is_conditional_nll(model, x, labeled[c], noise);
      if (score > best_score) {
        best_score = score;
        best = int(c);
      }
    }
    return best;
  }
  std::vector<BinaryImage> pool;
  std::vector<int> owner;
  for (std::size_t c = 0; c < labeled.size(); ++c)
    for (const auto& y : labeled[c]) {
      pool.push_back(y);
      owner.push_back(int(c));
    }
  const auto exemplars = posterior_means(model, pool, pool);
  const BinaryImage query[] = {x};
  const auto feature = posterior_means(model, query, pool);
  return nearest_by_cosine(feature[0], exemplars, owner);
}

FewShotTask sample_few_shot_task(const GlyphDataset& data, int ways, int shots, std::mt19937_64& rng) {
  if (ways < 1 || shots < 1) throw ContractError("few-shot tasks need ways >= 1 and shots >= 1");
  std::vector<int> usable;
  for (std::size_t c = 0; c < data.classes.size(); ++c)
    if (int(data.classes[c].images.size()) >= shots + 1) usable.push_back(int(c));
  if (int(usable.size()) < ways) throw ContractError("not enough classes with shots + 1 images");
  for (int i = 0; i < ways; ++i) {
    std::uniform_int_distribution<int> pick(i, int(usable.size()) - 1);
    std::swap(usable[i], usable[pick(rng)]);
  }
  FewShotTask task;
  std::uniform_int_distribution<int> answer(0, ways - 1);
  task.answer = answer(rng);
  for (int w = 0; w < ways; ++w) {
    const GlyphClass& gc = data.classes[usable[w]];
    std::vector<int> idx(gc.images.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    const int need = shots + (w == task.answer ? 1 : 0);
    for (int i = 0; i < need; ++i) {
      std::uniform_int_distribution<int> pick(i, int(idx.size()) - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<BinaryImage> shots_set;
    for (int i = 0; i < shots; ++i) shots_set.push_back(gc.images[idx[i]]);
    if (w == task.answer) task.query = gc.images[idx[shots]];
    task.labeled.push_back(std::move(shots_set));
    task.class_ids.push_back(gc.class_id);
  }
  return task;
}

FewShotResult few_shot_eval(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int ways,
                            int shots, int trials, ClassifyMethod method, int samples, std::mt19937_64& rng) {
  if (trials < 1) throw ContractError("few_shot_eval needs trials >= 1");
  const std::uint64_t base = rng();
  std::vector<int> correct(trials, 0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < trials; ++i) {
    std::mt19937_64 local = derive_rng(base, std::uint64_t(i));
    const FewShotTask task = sample_few_shot_task(data, ways, shots, local);
    correct[i] = classify(model, task.query, task.labeled, method, samples, local) == task.answer ? 1 : 0;
  }
  FewShotResult r;
  r.trials = trials;
  int hits = 0;
  for (int c : correct) hits += c;
  r.accuracy = double(hits) / trials;
  r.se = std::sqrt(r.accuracy * (1 - r.accuracy) / trials);
  return r;
}

EntropyCurve prior_entropy_curve(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int classes,
                                 int length, int episodes, std::mt19937_64& rng) {
  const GMNConfig& cfg = model.config();
  EntropyCurve curve;
  if (cfg.prior_mode == PriorMode::standard_normal) {
    const double h = diag_gaussian_entropy(DiagGaussian::standard(cfg.latent_dim));
    curve.mean.assign(length, h);
    curve.se.assign(length, 0.0);
    return curve;
  }
  const std::uint64_t base = rng();
  std::vector<std::vector<double>> per_episode(episodes, std::vector<double>(length, kNaN));
  const int first = cfg.pseudo_count == 1 ? 0 : 1;
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < episodes; ++e) {
    std::mt19937_64 local = derive_rng(base, std::uint64_t(e));
    const Episode ep = sample_episode(data, length, classes, local);
    const auto images = ep.images();
    ad::Tape<float> tape(false);
    EncodedEpisode enc = encode_episode(tape, model, images);
    for (int t = first; t < length; ++t) {
      const auto mark = tape.mark();
      ConditioningSet set = prefix(tape, enc.set, t);
      per_episode[e][t] = diag_gaussian_entropy(read_gaussian(tape, prior_params(tape, model, set)));
      tape.rewind(mark);
    }
  }
  for (int t = 0; t < length; ++t) {
    std::vector<double> column;
    for (const auto& v : per_episode) column.push_back(v[t]);
    const MeanSe m = mean_se(column);
    curve.mean.push_back(m.mean);
    curve.se.push_back(m.se);
  }
  return curve;
}

namespace {

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const NLLCurve& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError(path.string() + ": cannot open for writing");
  out << "statistic";
  for (std::size_t t = 0; t < curve.mean.size(); ++t) out << ",t=" << t;
  out << "\nmean_nll";
  for (double v : curve.mean) out << "," << csv_number(v);
  out << "\nse";
  for (double v : curve.se) out << "," << csv_number(v);
  out << "\ncount";
  for (int c : curve.count) out << "," << c;
  out << "\n";
}

nlohmann::json to_json(const NLLCurve& curve) {
  auto nullable = [](const std::vector<double>& xs) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : xs) arr.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
    return arr;
  };
  return {{"mean_nll", nullable(curve.mean)}, {"se", nullable(curve.se)},   {"count", curve.count},
          {"episodes", curve.episodes},       {"is_samples", curve.samples}, {"classes", curve.classes}};
}

GrayImage sample_grid(const GenerativeMatchingNetwork<float>& model, std::span<const BinaryImage> conditioning,
                      int samples_per_row, bool probabilities, std::mt19937_64& rng) {
  constexpr int kGap = 2;
  const int rows = int(conditioning.size());
  const int cols = 1 + samples_per_row;
  GrayImage img;
  img.width = cols * kImageSide + (cols - 1) * kGap + kGap;  // extra gap after the data column
  img.height = rows * kImageSide + (rows - 1) * kGap;
  img.pixels.assign(std::size_t(img.width) * img.height, 255);
  auto put = [&](int row, int col, auto&& value) {
    const int x0 = col * (kImageSide + kGap) + (col > 0 ? kGap : 0);
    const int y0 = row * (kImageSide + kGap);
    for (int r = 0; r < kImageSide; ++r)
      for (int c = 0; c < kImageSide; ++c)
        img.pixels[std::size_t(y0 + r) * img.width + x0 + c] = std::uint8_t(std::lround(255.0 * (1.0 - value(r, c))));
  };
  const int first = first_defined_step(model.config());
  for (int t = 0; t < rows; ++t) {
    put(t, 0, [&](int r, int c) { return double(conditioning[t].at(r, c)); });
    if (t < first) continue;
    for (int s = 0; s < samples_per_row; ++s) {
      const GeneratedImage g = generate(model, conditioning.subspan(0, t), rng);
      put(t, 1 + s, [&](int r, int c) {
        return probabilities ? g.probabilities[r * kImageSide + c] : double(g.sample.at(r, c));
      });
    }
  }
  return img;
}

}  // namespace gmn
