#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "gmn/matching.hpp"
#include "gmn/model.hpp"
#include "model_support.hpp"

using namespace gmn;
using namespace gmn::ad;
using gmn::testing::random_images;
using gmn::testing::random_vector;

namespace {

GMNConfig tiny_with(int pseudo, Variant v = Variant::full) {
  GMNConfig c = GMNConfig::tiny();
  c.pseudo_count = pseudo;
  c.variant = v;
  return c;
}

std::vector<double> values(const Tape<double>& t, Var v) {
  auto s = t.value(v);
  return {s.begin(), s.end()};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("attention weights lie on the simplex and ignore logit shifts") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(1, 12), dim(1, 9);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng), m = dim(rng);
    const auto q = random_vector(rng, m, -2, 2);
    auto keys = random_vector(rng, n * m, -2, 2);
    Tape<double> t(false);
    auto w = values(t, attention_weights(t, t.constant(q, {m}), t.constant(keys, {n, m})));
    double total = 0;
    for (double x : w) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // keys + u with q.u = c add c to every similarity
    double qq = 0;
    for (double x : q) qq += x * x;
    if (qq < 1e-6) continue;
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m; ++k) keys[i * m + k] += c * q[k] / qq;
    auto shifted = values(t, attention_weights(t, t.constant(q, {m}), t.constant(keys, {n, m})));
    CHECK(max_abs_diff(w, shifted) < 1e-9);
  }
}

TEST_CASE("attention and interpolation contracts") {
  Tape<double> t(false);
  Var q = t.constant({1.0, 2.0}, {2});
  CHECK_THROWS_AS(attention_weights(t, q, t.constant({}, {0, 2})), ContractError);
  CHECK_THROWS_AS(interpolate_prototypes(t, t.constant({0.5, 0.5}, {2}), t.constant({1, 2, 3}, {3, 1})),
                  ContractError);
  auto r = values(t, interpolate_prototypes(t, t.constant({0.25, 0.75}, {2}), t.constant({1, 2, 3, 4}, {2, 2})));
  CHECK(r[0] == doctest::Approx(2.5));
  CHECK(r[1] == doctest::Approx(3.5));
}

TEST_CASE("full-context matching is invariant to permutations of the set") {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> size(1, 6);
  for (int pseudo = 0; pseudo <= 1; ++pseudo) {
    const GenerativeMatchingNetwork<double> model(tiny_with(pseudo), 4 + pseudo);
    const auto& c = model.config();
    for (int trial = 0; trial < 100; ++trial) {
      const int n = size(rng);
      auto images = random_images(rng, n);
      const auto query = random_vector(rng, c.feature_dim());
      auto run = [&](const std::vector<BinaryImage>& set_images, MatchSide side) {
        Tape<double> t(false);
        EncodedEpisode ep = encode_episode(t, model, set_images);
        ConditioningSet set = augment_with_pseudo(model, ep.set);
        Var qf = side == MatchSide::prior ? Var{} : t.constant(query, {c.feature_dim()});
        MatchState s = full_context_match(t, model, side, qf, set, c.shared_steps);
        auto out = values(t, s.r);
        auto h = values(t, s.h);
        out.insert(out.end(), h.begin(), h.end());
        return out;
      };
      auto perm = images;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (MatchSide side : {MatchSide::recognition, MatchSide::prior})
        CHECK(max_abs_diff(run(images, side), run(perm, side)) < 1e-5);
    }
  }
}

TEST_CASE("a single element takes all the weight") {
  const GenerativeMatchingNetwork<double> model(tiny_with(0), 6);
  const auto& c = model.config();
  std::mt19937_64 rng(23);
  Tape<double> t(false);
  EncodedEpisode ep = encode_episode(t, model, random_images(rng, 1));
  MatchState s = full_context_match(t, model, MatchSide::recognition,
                                    t.constant(random_vector(rng, c.feature_dim()), {c.feature_dim()}), ep.set,
                                    c.shared_steps);
  for (Var w : s.weights) CHECK(t.scalar(w) == 1.0);
  CHECK(s.step == c.shared_steps);
}

TEST_CASE("empty sets: the pseudo-input stands in, otherwise a contract error") {
  std::mt19937_64 rng(24);
  const GenerativeMatchingNetwork<double> with(tiny_with(1), 7);
  const auto& c = with.config();
  Tape<double> t(false);
  EncodedEpisode ep = encode_episode(t, with, std::span<const BinaryImage>{});
  ConditioningSet set = augment_with_pseudo(with, ep.set);
  CHECK(set.size == 0);
  CHECK(set.elements() == 1);
  MatchState s = full_context_match(t, with, MatchSide::generative,
                                    t.constant(random_vector(rng, c.feature_dim()), {c.feature_dim()}), set,
                                    c.shared_steps);
  CHECK(t.scalar(s.weights[0]) == 1.0);
  MatchState p = prior_match(t, with, set, c.prior_steps);
  CHECK(t.size(p.r) == c.match_dim);

  const GenerativeMatchingNetwork<double> without(tiny_with(0), 7);
  Tape<double> u(false);
  EncodedEpisode none = encode_episode(u, without, std::span<const BinaryImage>{});
  CHECK_THROWS_AS(full_context_match(u, without, MatchSide::recognition,
                                     u.constant(random_vector(rng, c.feature_dim()), {c.feature_dim()}),
                                     augment_with_pseudo(without, none.set), c.shared_steps),
                  ContractError);
}

TEST_CASE("prefixes match a set built from the first t images") {
  std::mt19937_64 rng(25);
  const GenerativeMatchingNetwork<double> model(tiny_with(1), 8);
  const auto& c = model.config();
  auto images = random_images(rng, 5);
  const auto query = random_vector(rng, c.feature_dim());
  for (int t0 = 0; t0 <= 5; ++t0) {
    Tape<double> a(false), b(false);
    EncodedEpisode full = encode_episode(a, model, images);
    ConditioningSet pre = augment_with_pseudo(model, prefix(a, full.set, t0));
    EncodedEpisode direct = encode_episode(b, model, std::span(images).subspan(0, t0));
    ConditioningSet dir = augment_with_pseudo(model, direct.set);
    auto ra = values(a, full_context_match(a, model, MatchSide::recognition, a.constant(query, {c.feature_dim()}),
                                           pre, c.shared_steps).r);
    auto rb = values(b, full_context_match(b, model, MatchSide::recognition, b.constant(query, {c.feature_dim()}),
                                           dir, c.shared_steps).r);
    CHECK(max_abs_diff(ra, rb) < 1e-12);
  }
}

TEST_CASE("no-attention variant uses uniform weights") {
  std::mt19937_64 rng(26);
  const GenerativeMatchingNetwork<double> model(tiny_with(1, Variant::no_attention), 9);
  const auto& c = model.config();
  Tape<double> t(false);
  EncodedEpisode ep = encode_episode(t, model, random_images(rng, 3));
  MatchState s = full_context_match(t, model, MatchSide::recognition,
                                    t.constant(random_vector(rng, c.feature_dim()), {c.feature_dim()}),
                                    augment_with_pseudo(model, ep.set), c.shared_steps);
  for (Var w : s.weights)
    for (double x : t.value(w)) CHECK(x == doctest::Approx(0.25));
}
