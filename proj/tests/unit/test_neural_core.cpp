#include <doctest.h>

#include <set>

#include "gmn/neural_core.hpp"
#include "model_support.hpp"

using namespace gmn;
using namespace gmn::ad;
using gmn::testing::model_gradient_error;
using gmn::testing::random_image;
using gmn::testing::random_vector;

TEST_CASE("paper geometry closes the 28 -> 3 -> 28 chain") {
  const GMNConfig c = GMNConfig::paper();
  CHECK(c.encoder_sides() == std::vector<int>{28, 13, 6, 3});
  CHECK(c.decoder_sides() == std::vector<int>{3, 6, 13, 28});
  CHECK(c.feature_side() == 3);
  CHECK(c.feature_dim() == 3 * 3 * c.encoder_blocks.back().filters);
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(GMNConfig::reduced().validate());
  CHECK_NOTHROW(GMNConfig::tiny().validate());
}

TEST_CASE("invalid configurations are rejected") {
  GMNConfig c = GMNConfig::tiny();
  c.latent_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GMNConfig::tiny();
  c.pseudo_count = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GMNConfig::tiny();
  c.encoder_blocks.back().stride = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GMNConfig::tiny();
  c.shared_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config JSON round trip") {
  GMNConfig c = GMNConfig::reduced();
  c.variant = Variant::no_attention;
  c.prior_mode = PriorMode::standard_normal;
  nlohmann::json j = c;
  CHECK(j.get<GMNConfig>() == c);
  CHECK_THROWS_AS(parse_variant("attention"), ConfigError);
}

TEST_CASE("encoder and decoder output shapes") {
  const GenerativeMatchingNetwork<float> model(GMNConfig::reduced(), 3);
  Tape<float> t(false);
  std::mt19937_64 rng(1);
  Var f = encode_image(t, model, image_input(t, random_image(rng)));
  CHECK(t.shape(f) == Shape{model.config().feature_dim()});
  const auto& c = model.config();
  Var z = t.constant(std::vector<float>(c.latent_dim, 0.1f), {c.latent_dim});
  Var r = t.constant(std::vector<float>(c.match_dim, 0.1f), {c.match_dim});
  Var h = t.constant(std::vector<float>(c.state_dim, 0.1f), {c.state_dim});
  CHECK(t.shape(decode_logits(t, model, z, r, h)) == Shape{28, 28});
}

TEST_CASE("parameter declaration follows the configuration") {
  ParameterStore<float> full;
  declare_parameters(GMNConfig::tiny(), full);
  CHECK(full.contains("pseudo.key"));
  CHECK(full.contains("ctrl.prior.wh"));
  CHECK(full.contains("head.f_prior.wh"));
  CHECK_FALSE(full.contains("head.f_prior.wx"));
  CHECK_THROWS_AS(full.add("pseudo.key", {3}, ParamGroup::pseudo), ContractError);
  CHECK_THROWS_AS(full.id("nope"), ContractError);

  GMNConfig np = GMNConfig::tiny();
  np.pseudo_count = 0;
  ParameterStore<float> no_pseudo;
  declare_parameters(np, no_pseudo);
  CHECK_FALSE(no_pseudo.contains("pseudo.key"));
  CHECK_FALSE(no_pseudo.contains("pseudo.proto"));

  GMNConfig sn = GMNConfig::tiny();
  sn.prior_mode = PriorMode::standard_normal;
  ParameterStore<float> standard;
  declare_parameters(sn, standard);
  CHECK_FALSE(standard.contains("ctrl.prior.wh"));
  CHECK_FALSE(standard.contains("prior.w"));
  CHECK_FALSE(standard.contains("pseudo.key_prior"));
}

TEST_CASE("sharing scheme: distinct prior machinery, shared f/g/psi") {
  ParameterStore<float> s;
  const ModelLayout l = declare_parameters(GMNConfig::tiny(), s);
  std::set<ParamId> ids{l.f.wx, l.g.wx, l.psi.wx, l.g_prior.wx, l.latent_lift.wx};
  CHECK(ids.size() == 5);
  CHECK(l.f_prior.wh != l.f.wh);
  CHECK(l.shared.wx != l.prior.wx);
  CHECK(l.shared.h0 != l.prior.h0);
  CHECK(l.head(HeadRole::f).wx == l.f.wx);
  CHECK(l.controller(ControllerKind::prior).wh == l.prior.wh);
  CHECK(s.group(l.prior_w) == ParamGroup::prior_heads);
  CHECK(s.group(l.prior.wh) == ParamGroup::controllers);
  CHECK(s.group(l.pseudo_key) == ParamGroup::pseudo);
}

TEST_CASE("initialization: slopes 0.25, zero biases, scaled weights") {
  const GenerativeMatchingNetwork<float> model(GMNConfig::reduced(), 5);
  const auto& p = model.parameters();
  const auto& l = model.layout();
  for (float v : p.data(l.encoder[0].slope)) CHECK(v == 0.25f);
  for (float v : p.data(l.encoder[0].conv1_b)) CHECK(v == 0.0f);
  for (float v : p.data(l.shared.h0)) CHECK(v == 0.0f);
  auto w = p.data(l.encoder[1].conv1_w);
  double ss = 0;
  for (float v : w) ss += double(v) * v;
  const auto& shape = p.shape(l.encoder[1].conv1_w);
  const double fan_in = double(shape[1]) * shape[2] * shape[3];
  const double expected = 2.0 / (1 + 0.25 * 0.25) / fan_in;
  CHECK(ss / w.size() == doctest::Approx(expected).epsilon(0.15));

  const GenerativeMatchingNetwork<float> again(GMNConfig::reduced(), 5);
  CHECK(std::equal(w.begin(), w.end(), again.parameters().data(l.encoder[1].conv1_w).begin()));
}

TEST_CASE("embedding heads check their inputs") {
  const GenerativeMatchingNetwork<double> model(GMNConfig::tiny(), 1);
  const auto& c = model.config();
  Tape<double> t(false);
  Var feat = t.constant(std::vector<double>(c.feature_dim(), 0.5), {c.feature_dim()});
  Var h = t.constant(std::vector<double>(c.state_dim, 0.5), {c.state_dim});
  CHECK(t.shape(embedding_head(t, model, HeadRole::g, feat, h)) == Shape{c.match_dim});
  CHECK(t.shape(embedding_head(t, model, HeadRole::f_prior, Var{}, h)) == Shape{c.match_dim});
  CHECK_THROWS_AS(embedding_head(t, model, HeadRole::f_prior, feat, h), ContractError);
  CHECK_THROWS_AS(embedding_head(t, model, HeadRole::g, Var{}, h), ContractError);
  CHECK_THROWS_AS(embedding_head(t, model, HeadRole::psi, feat, Var{}), ContractError);
}

TEST_CASE("building blocks: finite-difference gradients in double") {
  GenerativeMatchingNetwork<double> model(GMNConfig::tiny(), 2);
  const auto& c = model.config();
  std::mt19937_64 rng(9);
  const BinaryImage img = random_image(rng);
  const auto zv = random_vector(rng, c.latent_dim), rv = random_vector(rng, c.match_dim);
  const auto hv = random_vector(rng, c.state_dim);
  std::vector<double> proj_feat = random_vector(rng, c.feature_dim());
  std::vector<double> proj_img = random_vector(rng, kImagePixels);

  SUBCASE("encoder") {
    auto r = model_gradient_error(model, [&](Tape<double>& t, const GenerativeMatchingNetwork<double>& m) {
      Var f = encode_image(t, m, image_input(t, img));
      return sum(t, mul(t, f, t.constant(proj_feat, {c.feature_dim()})));
    });
    INFO(r.worst_param);
    CHECK(r.worst < 1e-3);
  }
  SUBCASE("decoder") {
    auto r = model_gradient_error(model, [&](Tape<double>& t, const GenerativeMatchingNetwork<double>& m) {
      Var l = decode_logits(t, m, t.constant(zv, {c.latent_dim}), t.constant(rv, {c.match_dim}),
                            t.constant(hv, {c.state_dim}));
      return sum(t, mul(t, l, t.constant(proj_img, {28, 28})));
    });
    INFO(r.worst_param);
    CHECK(r.worst < 1e-3);
  }
  SUBCASE("controller step") {
    const auto in = random_vector(rng, c.match_dim);
    auto r = model_gradient_error(model, [&](Tape<double>& t, const GenerativeMatchingNetwork<double>& m) {
      Var h = t.constant(hv, {c.state_dim});
      Var h2 = gru_step(t, m, ControllerKind::prior, h, t.constant(in, {c.match_dim}));
      Var g = embedding_head(t, m, HeadRole::psi, t.constant(std::vector<double>(c.feature_dim(), 0.3),
                                                             {c.feature_dim()}), h2);
      return sum(t, mul(t, g, g));
    });
    INFO(r.worst_param);
    CHECK(r.worst < 1e-3);
  }
}
