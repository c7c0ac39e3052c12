#pragma once

// The assembled model: data-dependent prior, recognition model, conditional
// Bernoulli likelihood, per-step and per-episode lower bounds, sampling.

#include <cstdint>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "gmn/matching.hpp"

namespace gmn {

inline constexpr double kLogVarianceBound = 10.0;

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_variance;

  int dim() const { return int(mean.size()); }
  static DiagGaussian standard(int dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)}; }
};

double diag_gaussian_logpdf(std::span<const double> z, const DiagGaussian& d);
double diag_gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);
double diag_gaussian_entropy(const DiagGaussian& d);

struct LatentSample {
  std::vector<double> z;
  std::vector<double> eps;
  DiagGaussian dist;
};

LatentSample reparam_sample(const DiagGaussian& d, std::span<const double> eps);

// Mean and clamped log-variance living on a tape.
struct GaussianVars {
  ad::Var mean;
  ad::Var logvar;
};

template <typename T>
DiagGaussian read_gaussian(const ad::Tape<T>& tape, const GaussianVars& g);

// Encoder features of an ordered image list, computed once and shared by
// every prefix of the episode.
struct EncodedEpisode {
  std::vector<ad::Var> image_features;  // [feature_dim] each
  ConditioningSet set;                  // all images, in order, without pseudo-input
  int length() const { return int(image_features.size()); }
};

template <typename T>
EncodedEpisode encode_episode(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model,
                              std::span<const BinaryImage> images);

// p(z | X). The set is augmented with the pseudo-input here; a standard
// normal prior ignores it.
template <typename T>
GaussianVars prior_params(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const ConditioningSet& set);

// q(z | x, X) from the query's encoder features.
template <typename T>
GaussianVars recognition_params(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var x_features,
                                const ConditioningSet& set);

// Generative matching for z followed by the decoder; [28, 28] logits.
template <typename T>
ad::Var generative_logits(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var z,
                          const ConditioningSet& set);

// log p(x | z, X) in nats, shape [1].
template <typename T>
ad::Var conditional_loglik(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const BinaryImage& x,
                           ad::Var z, const ConditioningSet& set);

struct ElboTerm {
  ad::Var value;   // loglik - kl
  ad::Var loglik;
  ad::Var kl;
  ad::Var z;
  GaussianVars q;
  GaussianVars p;
};

// One-sample bound on log p(x_t | X_{<t}) with the analytic KL.
template <typename T>
ElboTerm elbo_term(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const EncodedEpisode& episode,
                   std::span<const BinaryImage> images, int t, std::span<const std::type_identity_t<T>> eps);

// The same bound in sampled form: log p(x|z) + log p(z) - log q(z).
template <typename T>
ad::Var elbo_term_sampled(ad::Tape<T>& tape, const ElboTerm& term);

// First t with a defined conditional: 0 with a pseudo-input (or the plain
// VAE), otherwise 1 because p(x | {}) has nothing to attend to.
int first_defined_step(const GMNConfig& config);

struct EpisodeElbo {
  ad::Var total;
  std::vector<ElboTerm> terms;  // terms[i] is step first + i
  int first = 0;
};

// Sum of elbo_term over every defined prefix. eps holds one latent_dim row
// per image.
template <typename T>
EpisodeElbo episode_elbo(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model,
                         std::span<const BinaryImage> images, std::span<const std::type_identity_t<T>> eps);

struct GeneratedImage {
  BinaryImage sample;
  std::vector<double> probabilities;  // 784, row-major
};

template <typename T>
GeneratedImage generate(const GenerativeMatchingNetwork<T>& model, std::span<const BinaryImage> conditioning,
                        std::mt19937_64& rng);

std::vector<double> standard_normal_noise(std::mt19937_64& rng, std::size_t n);

}  // namespace gmn
