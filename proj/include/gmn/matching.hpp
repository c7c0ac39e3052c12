#pragma once

// Attention over a conditioning set: dot-product similarities in the
// matching space, softmax weights, prototype interpolation, and the K-step
// controller loop shared by the recognition, generative and prior sides.

#include <vector>

#include "gmn/neural_core.hpp"

namespace gmn {

// softmax(keys[n, M] q[M]); empty key sets throw ContractError.
template <typename T>
ad::Var attention_weights(ad::Tape<T>& tape, ad::Var query, ad::Var keys);

// sum_t weights[t] prototypes[t, :]
template <typename T>
ad::Var interpolate_prototypes(ad::Tape<T>& tape, ad::Var weights, ad::Var prototypes);

// Encoded conditioning set. The state-independent half of every key and
// prototype head (Wx features + b) is computed once per set and reused at
// each controller step.
struct ConditioningSet {
  int size = 0;          // real elements, pseudo-input excluded
  bool pseudo = false;   // pseudo-input appended as the last element
  ad::Var features;      // [size, feature_dim]
  ad::Var key_proj;      // g: [size, M]
  ad::Var proto_proj;    // psi: [size, M]
  ad::Var prior_key_proj;  // g_prior: [size, M], data-dependent prior only

  int elements() const { return size + (pseudo ? 1 : 0); }
};

// Projects already-encoded features [n, feature_dim] (n may be 0).
template <typename T>
ConditioningSet make_conditioning_set(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var features,
                                      int n);

// First t rows of a set.
template <typename T>
ConditioningSet prefix(ad::Tape<T>& tape, const ConditioningSet& set, int t);

// Marks the set as carrying the model's pseudo-input when pseudo_count is 1.
template <typename T>
ConditioningSet augment_with_pseudo(const GenerativeMatchingNetwork<T>& model, ConditioningSet set);

enum class MatchSide { generative, recognition, prior };

struct MatchState {
  ad::Var r;  // prototype from the last step
  ad::Var h;  // controller state after the last update
  int step = 0;
  std::vector<ad::Var> weights;     // attention weights per step
  std::vector<ad::Var> prototypes;  // r per step
};

// K steps of full-context matching. query_features is lift(z) on the
// generative side, encode(x) on the recognition side and must be invalid
// for the prior, whose query comes from the controller state alone.
template <typename T>
MatchState full_context_match(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, MatchSide side,
                              ad::Var query_features, const ConditioningSet& set, int steps);

template <typename T>
MatchState prior_match(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, const ConditioningSet& set,
                       int steps) {
  return full_context_match(tape, model, MatchSide::prior, ad::Var{}, set, steps);
}

}  // namespace gmn
