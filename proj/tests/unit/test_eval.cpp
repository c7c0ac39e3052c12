#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "gmn/eval.hpp"
#include "model_support.hpp"

using namespace gmn;
namespace fs = std::filesystem;
using gmn::testing::random_images;
using gmn::testing::toy_dataset;

namespace {

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (std::log(2 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

// z ~ N(0, 1), x | z ~ N(z, 1): p(x) = N(0, 2), p(z | x) = N(x / 2, 1 / 2).
struct GaussianToy {
  double x;
  double log_evidence() const { return normal_logpdf(x, 0, 2); }
  ImportanceTerms draw(std::mt19937_64& rng, double q_mean, double q_var) const {
    const double z = q_mean + std::sqrt(q_var) * std::normal_distribution<double>()(rng);
    return {normal_logpdf(x, z, 1), normal_logpdf(z, 0, 1), normal_logpdf(z, q_mean, q_var)};
  }
};

GMNConfig tiny(int pseudo = 1, PriorMode prior = PriorMode::data_dependent) {
  GMNConfig c = GMNConfig::tiny();
  c.pseudo_count = pseudo;
  c.prior_mode = prior;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("log-mean-exp stays finite across a thousand nats") {
  const std::vector<double> w{-1000.0, 0.0, -500.0, 3.0};
  const double expected = 3.0 + std::log1p(std::exp(-3.0) + std::exp(-503.0) + std::exp(-1003.0)) - std::log(4.0);
  CHECK(log_mean_exp(w) == doctest::Approx(expected).epsilon(1e-14));
  const std::vector<double> low{-2000.0, -2001.0};
  CHECK(log_mean_exp(low) == doctest::Approx(-2000.0 + std::log((1 + std::exp(-1.0)) / 2)).epsilon(1e-14));
  CHECK(std::isfinite(log_mean_exp(low)));

  std::vector<ImportanceTerms> bad{{-1, 0, 0}, {std::nan(""), 0, 0}};
  CHECK_THROWS_AS(importance_nll(bad), NumericError);
  bad[1] = {0, -std::numeric_limits<double>::infinity(), 0};
  CHECK_THROWS_AS(importance_nll(bad), NumericError);
}

TEST_CASE("importance sampling on a Gaussian toy with a known evidence") {
  const GaussianToy toy{1.3};
  std::mt19937_64 rng(51);
  // exact posterior: every weight equals the evidence
  const double exact = is_conditional_nll([&](std::mt19937_64& r) { return toy.draw(r, toy.x / 2, 0.5); }, 5, rng);
  CHECK(exact == doctest::Approx(-toy.log_evidence()).epsilon(1e-12));

  auto prior_proposal = [&](std::mt19937_64& r) { return toy.draw(r, 0, 1); };
  CHECK(std::abs(is_conditional_nll(prior_proposal, 10000, rng) + toy.log_evidence()) < 0.01);

  // Jensen: the estimate is biased upward, less so with more samples
  auto bias = [&](int samples, int reps) {
    double sum = 0;
    for (int i = 0; i < reps; ++i) sum += is_conditional_nll(prior_proposal, samples, rng);
    return sum / reps + toy.log_evidence();
  };
  const double b10 = bias(10, 2000), b10k = bias(10000, 20);
  CHECK(b10 > 0);
  CHECK(std::abs(b10k) < b10);
}

TEST_CASE("conditional estimates ignore the order of the conditioning set") {
  const GenerativeMatchingNetwork<float> model(tiny(), 52);
  std::mt19937_64 rng(53);
  const auto images = random_images(rng, 4);
  const auto x = random_images(rng, 1).front();
  const auto noise = standard_normal_noise(rng, 20 * std::size_t(model.config().latent_dim));
  auto perm = images;
  std::reverse(perm.begin(), perm.end());
  const double a = is_conditional_nll(model, x, images, noise), b = is_conditional_nll(model, x, perm, noise);
  CHECK(std::isfinite(a));
  CHECK(std::abs(a - b) < 1e-4);
  CHECK(is_conditional_nll(model, x, images, noise) == a);
}

TEST_CASE("episode estimates are undefined before the first defined step") {
  std::mt19937_64 rng(54);
  const auto images = random_images(rng, 3);
  const GenerativeMatchingNetwork<float> without(tiny(0), 55), with(tiny(1), 55);
  const auto a = episode_nll(without, images, 5, rng), b = episode_nll(with, images, 5, rng);
  REQUIRE(a.size() == 3);
  CHECK(std::isnan(a[0]));
  CHECK(std::isfinite(a[1]));
  for (double v : b) CHECK(std::isfinite(v));
  const auto e = episode_elbo_terms(without, images, rng);
  CHECK(std::isnan(e[0]));
  // bounds on the log-probability of binary images
  for (std::size_t t = 1; t < 3; ++t) CHECK(e[t] < 0);
}

TEST_CASE("cosine nearest neighbour breaks ties toward the lowest class") {
  const std::vector<double> q{1, 0};
  const std::vector<std::vector<double>> ex{{0, 1}, {2, 0}, {1, 0}, {1, 0}};
  const std::vector<int> cls{0, 2, 1, 3};
  CHECK(nearest_by_cosine(q, ex, cls) == 1);
  const std::vector<std::vector<double>> opposite{{-1, 0}, {0, -1}};
  const std::vector<int> two{1, 0};
  CHECK(nearest_by_cosine(q, opposite, two) == 0);
}

TEST_CASE("classification with identical classes picks the first; one way is always right") {
  const GenerativeMatchingNetwork<float> model(tiny(), 56);
  std::mt19937_64 rng(57);
  const auto shot = random_images(rng, 1);
  const auto x = random_images(rng, 1).front();
  const std::vector<std::vector<BinaryImage>> same{shot, shot, shot};
  for (ClassifyMethod m : {ClassifyMethod::likelihood, ClassifyMethod::cosine})
    CHECK(classify(model, x, same, m, 5, rng) == 0);
  CHECK(parse_classify_method(to_string(ClassifyMethod::cosine)) == ClassifyMethod::cosine);
  CHECK_THROWS_AS(parse_classify_method("knn"), ConfigError);

  const GlyphDataset d = toy_dataset(6, 4, 58);
  const FewShotResult r = few_shot_eval(d, model, 1, 1, 10, ClassifyMethod::likelihood, 3, rng);
  CHECK(r.accuracy == 1.0);
  CHECK(r.se == 0.0);
  CHECK(r.trials == 10);
}

TEST_CASE("few-shot tasks draw distinct classes and a held-out query") {
  const GlyphDataset d = toy_dataset(8, 3, 59);
  std::mt19937_64 rng(60);
  for (int i = 0; i < 200; ++i) {
    const FewShotTask task = sample_few_shot_task(d, 5, 2, rng);
    REQUIRE(task.labeled.size() == 5);
    std::vector<std::int32_t> ids = task.class_ids;
    std::sort(ids.begin(), ids.end());
    CHECK(std::unique(ids.begin(), ids.end()) == ids.end());
    for (const auto& shots : task.labeled) CHECK(shots.size() == 2);
    REQUIRE(task.answer >= 0);
    REQUIRE(task.answer < 5);
  }
  CHECK_THROWS_AS(sample_few_shot_task(d, 5, 3, rng), ContractError);
  CHECK_THROWS_AS(sample_few_shot_task(d, 9, 1, rng), ContractError);
}

TEST_CASE("the standard-normal prior has a constant entropy curve") {
  const GlyphDataset d = toy_dataset(6, 6, 61);
  std::mt19937_64 rng(62);
  const GenerativeMatchingNetwork<float> sn(tiny(1, PriorMode::standard_normal), 63);
  const EntropyCurve e = prior_entropy_curve(d, sn, 2, 4, 3, rng);
  const double h = 0.5 * sn.config().latent_dim * std::log(2 * std::numbers::pi * std::numbers::e);
  REQUIRE(e.mean.size() == 4);
  for (double v : e.mean) CHECK(v == doctest::Approx(h).epsilon(1e-12));

  const GenerativeMatchingNetwork<float> dd(tiny(1), 63);
  const EntropyCurve f = prior_entropy_curve(d, dd, 2, 4, 3, rng);
  for (double v : f.mean) CHECK(std::isfinite(v));
}

TEST_CASE("curves: CSV and JSON layout") {
  const GlyphDataset d = toy_dataset(6, 6, 64);
  const GenerativeMatchingNetwork<float> model(tiny(0), 65);
  std::mt19937_64 rng(66);
  const NLLCurve c = nll_curve(d, model, 2, 3, 4, 3, rng);
  REQUIRE(c.mean.size() == 3);
  CHECK(std::isnan(c.mean[0]));
  CHECK(c.count == std::vector<int>{0, 4, 4});
  CHECK(c.se[1] >= 0);

  const fs::path p = fs::temp_directory_path() / "gmn_test_eval" / "curve.csv";
  write_curve_csv(p, c);
  const std::string text = slurp(p);
  CHECK(text.rfind("statistic,t=0,t=1,t=2\nmean_nll,,", 0) == 0);
  CHECK(text.find("\ncount,0,4,4\n") != std::string::npos);

  const nlohmann::json j = to_json(c);
  CHECK(j.at("mean_nll")[0].is_null());
  CHECK(j.at("mean_nll")[1].get<double>() == c.mean[1]);
  CHECK(j.at("episodes") == 4);
  CHECK(j.at("is_samples") == 3);
  CHECK(j.at("classes") == 2);
}

TEST_CASE("sample grid geometry") {
  const GenerativeMatchingNetwork<float> model(tiny(0), 67);
  std::mt19937_64 rng(68);
  const auto cond = random_images(rng, 3);
  const GrayImage g = sample_grid(model, cond, 2, false, rng);
  CHECK(g.width == 3 * 28 + 2 * 2 + 2);
  CHECK(g.height == 3 * 28 + 2 * 2);
  // data column shows the conditioning image, ink dark
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) CHECK(g.pixels[std::size_t(r) * g.width + c] == (cond[0].at(r, c) ? 0 : 255));
  // no conditional at t = 0 without a pseudo-input: samples stay blank
  for (int r = 0; r < 28; ++r)
    for (int c = 32; c < g.width; ++c) CHECK(g.pixels[std::size_t(r) * g.width + c] == 255);

  std::mt19937_64 a(1), b(1);
  CHECK(sample_grid(model, cond, 2, true, a).pixels == sample_grid(model, cond, 2, true, b).pixels);
}
