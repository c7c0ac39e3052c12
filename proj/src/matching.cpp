#include "gmn/matching.hpp"

#include "gmn/errors.hpp"

namespace gmn {

template <typename T>
ad::Var attention_weights(ad::Tape<T>& tape, ad::Var query, ad::Var keys) {
  if (tape.shape(keys).size() != 2 || tape.shape(keys)[0] == 0)
    throw ContractError("attention over an empty conditioning set; augment with the pseudo-input first");
  return ad::softmax(tape, ad::matvec(tape, keys, query));
}

template <typename T>
ad::Var interpolate_prototypes(ad::Tape<T>& tape, ad::Var weights, ad::Var prototypes) {
  if (tape.shape(prototypes).size() != 2 || tape.size(weights) != tape.shape(prototypes)[0])
    throw ContractError("interpolate_prototypes: " + ad::to_string(tape.shape(weights)) + " weights for " +
                        ad::to_string(tape.shape(prototypes)) + " prototypes");
  return ad::weighted_rows(tape, weights, prototypes);
}

template <typename T>
ConditioningSet make_conditioning_set(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var features,
                                      int n) {
  ConditioningSet set;
  set.size = n;
  if (n == 0) return set;
  if (tape.shape(features) != ad::Shape{n, model.config().feature_dim()})
    throw ShapeError("conditioning features " + ad::to_string(tape.shape(features)) + " for " + std::to_string(n) +
                     " elements");
  const ModelLayout& L = model.layout();
  set.features = features;
  auto project = [&](const HeadParams& p) {
    return ad::affine_rows(tape, model.bind(tape, p.wx), model.bind(tape, p.b), features);
  };
  set.proto_proj = project(L.psi);
  if (model.config().variant != Variant::no_attention) {
    set.key_proj = project(L.g);
    if (L.g_prior.b >= 0) set.prior_key_proj = project(L.g_prior);
  }
  return set;
}

template <typename T>
ConditioningSet prefix(ad::Tape<T>& tape, const ConditioningSet& set, int t) {
  if (t < 0 || t > set.size)
    throw ContractError("prefix of length " + std::to_string(t) + " from a set of " + std::to_string(set.size));
  if (t == set.size) return set;
  ConditioningSet out;
  out.size = t;
  out.pseudo = set.pseudo;
  if (t == 0) return out;
  auto cut = [&](ad::Var v) { return v.valid() ? ad::slice_rows(tape, v, 0, t) : ad::Var{}; };
  out.features = cut(set.features);
  out.key_proj = cut(set.key_proj);
  out.proto_proj = cut(set.proto_proj);
  out.prior_key_proj = cut(set.prior_key_proj);
  return out;
}

template <typename T>
ConditioningSet augment_with_pseudo(const GenerativeMatchingNetwork<T>& model, ConditioningSet set) {
  set.pseudo = model.config().pseudo_count == 1;
  return set;
}

namespace {

// Rows prelu(proj + Wh h) for the real elements, with the pseudo vector
// appended when present.
template <typename T>
ad::Var state_rows(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const HeadParams& head,
                   ad::Var proj, ad::Var h, const ConditioningSet& set, ParamId pseudo) {
  ad::Var rows{};
  if (set.size > 0) {
    ad::Var shift = ad::matvec(tape, model.bind(tape, head.wh), h);
    rows = ad::prelu(tape, ad::add_row(tape, proj, shift), model.bind(tape, head.slope));
  }
  if (!set.pseudo) return rows;
  ad::Var extra = model.bind(tape, pseudo);
  if (!rows.valid()) return ad::reshape(tape, extra, {1, tape.size(extra)});
  return ad::concat_rows(tape, rows, extra);
}

}  // namespace

template <typename T>
MatchState full_context_match(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, MatchSide side,
                              ad::Var query_features, const ConditioningSet& set, int steps) {
  if (steps < 1) throw ContractError("matching needs at least one step");
  if (set.elements() == 0)
    throw ContractError("matching over an empty conditioning set without a pseudo-input");
  const ModelLayout& L = model.layout();
  const bool prior = side == MatchSide::prior;
  if (prior && L.prior.wx < 0) throw ContractError("prior matching needs the data-dependent prior");
  if (prior == query_features.valid())
    throw ContractError(prior ? "prior matching takes no query features" : "matching query features missing");
  const bool uniform = model.config().variant == Variant::no_attention;
  const HeadRole query_role = prior ? HeadRole::f_prior : HeadRole::f;
  const HeadParams& key_head = prior ? L.g_prior : L.g;
  const ad::Var key_proj = prior ? set.prior_key_proj : set.key_proj;
  const ParamId pseudo_key = prior ? L.pseudo_key_prior : L.pseudo_key;
  const ControllerKind controller = prior ? ControllerKind::prior : ControllerKind::shared;

  MatchState state;
  state.h = model.bind(tape, L.controller(controller).h0);
  const int n = set.elements();
  for (int k = 0; k < steps; ++k) {
    ad::Var weights;
    if (uniform) {
      weights = tape.constant(std::vector<T>(n, T(1) / T(n)), {n});
    } else {
      ad::Var q = embedding_head(tape, model, query_role, query_features, state.h);
      ad::Var keys = state_rows(tape, model, key_head, key_proj, state.h, set, pseudo_key);
      weights = attention_weights(tape, q, keys);
    }
    ad::Var protos = state_rows(tape, model, L.psi, set.proto_proj, state.h, set, L.pseudo_proto);
    state.r = interpolate_prototypes(tape, weights, protos);
    state.h = gru_step(tape, model, controller, state.h, state.r);
    state.weights.push_back(weights);
    state.prototypes.push_back(state.r);
    state.step = k + 1;
  }
  return state;
}

#define GMN_INSTANTIATE_MATCHING(T)                                                                               \
  template ad::Var attention_weights<T>(ad::Tape<T>&, ad::Var, ad::Var);                                          \
  template ad::Var interpolate_prototypes<T>(ad::Tape<T>&, ad::Var, ad::Var);                                     \
  template ConditioningSet make_conditioning_set<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ad::Var,   \
                                                    int);                                                         \
  template ConditioningSet prefix<T>(ad::Tape<T>&, const ConditioningSet&, int);                                  \
  template ConditioningSet augment_with_pseudo<T>(const GenerativeMatchingNetwork<T>&, ConditioningSet);          \
  template MatchState full_context_match<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, MatchSide, ad::Var, \
                                            const ConditioningSet&, int);

GMN_INSTANTIATE_MATCHING(float)
GMN_INSTANTIATE_MATCHING(double)

#undef GMN_INSTANTIATE_MATCHING

}  // namespace gmn
