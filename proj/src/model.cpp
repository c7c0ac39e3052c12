#include "gmn/model.hpp"

#include <cmath>
#include <numbers>

#include "gmn/errors.hpp"

namespace gmn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": dimension " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

double diag_gaussian_logpdf(std::span<const double> z, const DiagGaussian& d) {
  require_same_dim(z.size(), d.mean.size(), "diag_gaussian_logpdf");
  double acc = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - d.mean[i];
    acc += kLog2Pi + d.log_variance[i] + diff * diff * std::exp(-d.log_variance[i]);
  }
  return -0.5 * acc;
}

double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q.mean.size(), p.mean.size(), "diag_gaussian_kl");
  double acc = 0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    const double diff = q.mean[i] - p.mean[i];
    acc += p.log_variance[i] - q.log_variance[i] +
           (std::exp(q.log_variance[i]) + diff * diff) * std::exp(-p.log_variance[i]) - 1.0;
  }
  return 0.5 * acc;
}

double diag_gaussian_entropy(const DiagGaussian& d) {
  double acc = 0;
  for (double lv : d.log_variance) acc += kLog2Pi + 1.0 + lv;
  return 0.5 * acc;
}

LatentSample reparam_sample(const DiagGaussian& d, std::span<const double> eps) {
  require_same_dim(eps.size(), d.mean.size(), "reparam_sample");
  LatentSample s;
  s.dist = d;
  s.eps.assign(eps.begin(), eps.end());
  s.z.resize(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) s.z[i] = d.mean[i] + std::exp(0.5 * d.log_variance[i]) * eps[i];
  return s;
}

std::vector<double> standard_normal_noise(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> dist;
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

int first_defined_step(const GMNConfig& config) {
  return config.pseudo_count == 1 || config.variant == Variant::vae ? 0 : 1;
}

template <typename T>
DiagGaussian read_gaussian(const ad::Tape<T>& tape, const GaussianVars& g) {
  auto m = tape.value(g.mean), lv = tape.value(g.logvar);
  return {std::vector<double>(m.begin(), m.end()), std::vector<double>(lv.begin(), lv.end())};
}

template <typename T>
EncodedEpisode encode_episode(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model,
                              std::span<const BinaryImage> images) {
  EncodedEpisode ep;
  for (const BinaryImage& img : images) ep.image_features.push_back(encode_image(tape, model, image_input(tape, img)));
  const int n = int(images.size());
  ad::Var features{};
  if (n > 0) {
    features = ad::concat<T>(tape, ep.image_features);
    features = ad::reshape(tape, features, {n, model.config().feature_dim()});
  }
  // The plain VAE never looks at the set.
  if (model.config().variant == Variant::vae) {
    ep.set.size = n;
    ep.set.features = features;
  } else {
    ep.set = make_conditioning_set(tape, model, features, n);
  }
  return ep;
}

namespace {

template <typename T>
GaussianVars gaussian_head(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ParamId w, ParamId b,
                           const MatchState& m) {
  const ad::Var parts[] = {m.r, m.h};
  ad::Var out = ad::affine(tape, model.bind(tape, w), model.bind(tape, b), ad::concat<T>(tape, parts));
  const int z = model.config().latent_dim;
  return {ad::slice(tape, out, 0, z),
          ad::clamp(tape, ad::slice(tape, out, z, 2 * z), T(-kLogVarianceBound), T(kLogVarianceBound))};
}

// The plain VAE replaces matching by one application of f at the initial
// controller state.
template <typename T>
MatchState unconditioned_match(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var query) {
  MatchState m;
  m.h = model.bind(tape, model.layout().shared.h0);
  m.r = embedding_head(tape, model, HeadRole::f, query, m.h);
  return m;
}

}  // namespace

template <typename T>
GaussianVars prior_params(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const ConditioningSet& set) {
  const GMNConfig& cfg = model.config();
  if (cfg.prior_mode == PriorMode::standard_normal) {
    const std::vector<T> zeros(cfg.latent_dim, T(0));
    return {tape.constant(zeros, {cfg.latent_dim}), tape.constant(zeros, {cfg.latent_dim})};
  }
  ConditioningSet augmented = augment_with_pseudo(model, set);
  if (cfg.variant == Variant::vae) augmented = augment_with_pseudo(model, ConditioningSet{});
  MatchState m = prior_match(tape, model, augmented, cfg.prior_steps);
  return gaussian_head(tape, model, model.layout().prior_w, model.layout().prior_b, m);
}

template <typename T>
GaussianVars recognition_params(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var x_features,
                                const ConditioningSet& set) {
  const GMNConfig& cfg = model.config();
  MatchState m = cfg.variant == Variant::vae
                     ? unconditioned_match(tape, model, x_features)
                     : full_context_match(tape, model, MatchSide::recognition, x_features,
                                          augment_with_pseudo(model, set), cfg.shared_steps);
  return gaussian_head(tape, model, model.layout().post_w, model.layout().post_b, m);
}

template <typename T>
ad::Var generative_logits(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var z,
                          const ConditioningSet& set) {
  const GMNConfig& cfg = model.config();
  ad::Var lifted = embedding_head(tape, model, HeadRole::latent_lift, z, ad::Var{});
  MatchState m = cfg.variant == Variant::vae
                     ? unconditioned_match(tape, model, lifted)
                     : full_context_match(tape, model, MatchSide::generative, lifted, augment_with_pseudo(model, set),
                                          cfg.shared_steps);
  return decode_logits(tape, model, z, m.r, m.h);
}

template <typename T>
ad::Var conditional_loglik(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const BinaryImage& x,
                           ad::Var z, const ConditioningSet& set) {
  return ad::bernoulli_loglik(tape, generative_logits(tape, model, z, set), x.view());
}

template <typename T>
ElboTerm elbo_term(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const EncodedEpisode& episode,
                   std::span<const BinaryImage> images, int t, std::span<const std::type_identity_t<T>> eps) {
  if (t < 0 || t >= episode.length() || images.size() != std::size_t(episode.length()))
    throw ContractError("elbo_term: step " + std::to_string(t) + " of an episode of " +
                        std::to_string(episode.length()));
  ConditioningSet set = prefix(tape, episode.set, t);
  ElboTerm term;
  term.q = recognition_params(tape, model, episode.image_features[t], set);
  term.p = prior_params(tape, model, set);
  term.z = ad::reparameterize(tape, term.q.mean, term.q.logvar, eps);
  term.loglik = conditional_loglik(tape, model, images[t], term.z, set);
  term.kl = ad::gaussian_kl(tape, term.q.mean, term.q.logvar, term.p.mean, term.p.logvar);
  term.value = ad::sub(tape, term.loglik, term.kl);
  return term;
}

template <typename T>
ad::Var elbo_term_sampled(ad::Tape<T>& tape, const ElboTerm& term) {
  ad::Var log_p = ad::gaussian_logpdf(tape, term.z, term.p.mean, term.p.logvar);
  ad::Var log_q = ad::gaussian_logpdf(tape, term.z, term.q.mean, term.q.logvar);
  return ad::add(tape, term.loglik, ad::sub(tape, log_p, log_q));
}

template <typename T>
EpisodeElbo episode_elbo(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model,
                         std::span<const BinaryImage> images, std::span<const std::type_identity_t<T>> eps) {
  const int n = int(images.size());
  const int z = model.config().latent_dim;
  if (eps.size() != std::size_t(n) * z)
    throw ShapeError("episode_elbo: " + std::to_string(eps.size()) + " noise values for " + std::to_string(n) +
                     " steps of dimension " + std::to_string(z));
  EpisodeElbo out;
  out.first = first_defined_step(model.config());
  if (n <= out.first) throw ContractError("episode too short for a defined conditional");
  EncodedEpisode episode = encode_episode(tape, model, images);
  for (int t = out.first; t < n; ++t) {
    out.terms.push_back(elbo_term(tape, model, episode, images, t, eps.subspan(std::size_t(t) * z, z)));
    out.total = out.total.valid() ? ad::add(tape, out.total, out.terms.back().value) : out.terms.back().value;
  }
  return out;
}

template <typename T>
GeneratedImage generate(const GenerativeMatchingNetwork<T>& model, std::span<const BinaryImage> conditioning,
                        std::mt19937_64& rng) {
  ad::Tape<T> tape(false);
  EncodedEpisode episode = encode_episode(tape, model, conditioning);
  DiagGaussian prior = read_gaussian(tape, prior_params(tape, model, episode.set));
  LatentSample s = reparam_sample(prior, standard_normal_noise(rng, prior.dim()));
  std::vector<T> z(s.z.begin(), s.z.end());
  ad::Var logits = generative_logits(tape, model, tape.constant(z, {prior.dim()}), episode.set);
  GeneratedImage out;
  out.probabilities.resize(kImagePixels);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lv = tape.value(logits);
  for (int i = 0; i < kImagePixels; ++i) {
    const double l = double(lv[i]);
    out.probabilities[i] = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    out.sample.pixels[i] = unit(rng) < out.probabilities[i] ? 1 : 0;
  }
  return out;
}

#define GMN_INSTANTIATE_MODEL(T)                                                                                  \
  template DiagGaussian read_gaussian<T>(const ad::Tape<T>&, const GaussianVars&);                                \
  template EncodedEpisode encode_episode<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&,                    \
                                            std::span<const BinaryImage>);                                        \
  template GaussianVars prior_params<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, const ConditioningSet&); \
  template GaussianVars recognition_params<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ad::Var,         \
                                              const ConditioningSet&);                                            \
  template ad::Var generative_logits<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ad::Var,               \
                                        const ConditioningSet&);                                                  \
  template ad::Var conditional_loglik<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, const BinaryImage&,   \
                                         ad::Var, const ConditioningSet&);                                        \
  template ElboTerm elbo_term<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, const EncodedEpisode&,        \
                                 std::span<const BinaryImage>, int, std::span<const T>);                          \
  template ad::Var elbo_term_sampled<T>(ad::Tape<T>&, const ElboTerm&);                                           \
  template EpisodeElbo episode_elbo<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&,                         \
                                       std::span<const BinaryImage>, std::span<const T>);                         \
  template GeneratedImage generate<T>(const GenerativeMatchingNetwork<T>&, std::span<const BinaryImage>,          \
                                      std::mt19937_64&);

GMN_INSTANTIATE_MODEL(float)
GMN_INSTANTIATE_MODEL(double)

#undef GMN_INSTANTIATE_MODEL

}  // namespace gmn
