#pragma once

// Importance-sampled conditional likelihoods, conditioning curves, few-shot
// classification, prior entropy curves and sample grids.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmn/data.hpp"
#include "gmn/model.hpp"

namespace gmn {

// log p(x|z) + log p(z) - log q(z) for one proposal draw.
struct ImportanceTerms {
  double log_likelihood = 0;
  double log_prior = 0;
  double log_proposal = 0;
  double log_weight() const { return log_likelihood + log_prior - log_proposal; }
};

double log_mean_exp(std::span<const double> values);

// -log mean_s exp(w_s); NumericError names the first non-finite term.
double importance_nll(std::span<const ImportanceTerms> draws);

// Model-agnostic estimator: `draw` produces one proposal sample's terms.
double is_conditional_nll(const std::function<ImportanceTerms(std::mt19937_64&)>& draw, int samples,
                          std::mt19937_64& rng);

// -log p(x | X) with q(z | x, X) as proposal. `noise` holds S rows of
// latent_dim standard normals, so estimates can be repeated with the same
// proposals.
double is_conditional_nll(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
                          std::span<const BinaryImage> conditioning, std::span<const double> noise);
double is_conditional_nll(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
                          std::span<const BinaryImage> conditioning, int samples, std::mt19937_64& rng);

// Estimates for every prefix of one episode; entries before
// first_defined_step are NaN.
std::vector<double> episode_nll(const GenerativeMatchingNetwork<float>& model, std::span<const BinaryImage> images,
                                int samples, std::mt19937_64& rng);

// One-sample analytic-KL bound for every prefix, NaN where undefined.
std::vector<double> episode_elbo_terms(const GenerativeMatchingNetwork<float>& model,
                                       std::span<const BinaryImage> images, std::mt19937_64& rng);

struct NLLCurve {
  std::vector<double> mean;  // per t, nats
  std::vector<double> se;
  std::vector<int> count;
  int episodes = 0;
  int samples = 0;
  int classes = 0;
};

NLLCurve nll_curve(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int classes, int length,
                   int episodes, int samples, std::mt19937_64& rng);

inline NLLCurve mnist_transfer_eval(const GlyphDataset& mnist, const GenerativeMatchingNetwork<float>& model,
                                    int classes, int length, int episodes, int samples, std::mt19937_64& rng) {
  return nll_curve(mnist, model, classes, length, episodes, samples, rng);
}

enum class ClassifyMethod { likelihood, cosine };
const char* to_string(ClassifyMethod m);
ClassifyMethod parse_classify_method(const std::string& s);

// Index into `labeled` of the predicted class; ties go to the lowest index.
int classify(const GenerativeMatchingNetwork<float>& model, const BinaryImage& x,
             const std::vector<std::vector<BinaryImage>>& labeled, ClassifyMethod method, int samples,
             std::mt19937_64& rng);

// Mean of q(z | y, X_pool) for each y, the cosine method's features.
std::vector<std::vector<double>> posterior_means(const GenerativeMatchingNetwork<float>& model,
                                                 std::span<const BinaryImage> images,
                                                 std::span<const BinaryImage> pool);

// Highest cosine similarity; exemplar_class[i] labels exemplars[i].
int nearest_by_cosine(std::span<const double> query, const std::vector<std::vector<double>>& exemplars,
                      std::span<const int> exemplar_class);

struct FewShotTask {
  std::vector<std::vector<BinaryImage>> labeled;
  std::vector<std::int32_t> class_ids;
  BinaryImage query;
  int answer = 0;
};

FewShotTask sample_few_shot_task(const GlyphDataset& data, int ways, int shots, std::mt19937_64& rng);

struct FewShotResult {
  double accuracy = 0;
  double se = 0;
  int trials = 0;
};

FewShotResult few_shot_eval(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int ways,
                            int shots, int trials, ClassifyMethod method, int samples, std::mt19937_64& rng);

struct EntropyCurve {
  std::vector<double> mean;
  std::vector<double> se;
};

EntropyCurve prior_entropy_curve(const GlyphDataset& data, const GenerativeMatchingNetwork<float>& model, int classes,
                                 int length, int episodes, std::mt19937_64& rng);

// statistic,t=0,...,t=T-1 with rows mean, se, count.
void write_curve_csv(const std::filesystem::path& path, const NLLCurve& curve);
nlohmann::json to_json(const NLLCurve& curve);

// Row t: conditioning image t in column 0, then samples given the first t
// images. Rows without a defined conditional stay blank.
GrayImage sample_grid(const GenerativeMatchingNetwork<float>& model, std::span<const BinaryImage> conditioning,
                      int samples_per_row, bool probabilities, std::mt19937_64& rng);

}  // namespace gmn
