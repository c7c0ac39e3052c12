#pragma once

// Building blocks with the model's fixed geometry: residual conv encoder,
// transposed-conv decoder, 200-d embedding heads, GRU controllers. All
// functions are pure in (inputs, parameters) and record onto a Tape.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gmn/config.hpp"
#include "gmn/image.hpp"
#include "gmn/ops.hpp"
#include "gmn/params.hpp"

namespace gmn {

struct ConvBlockParams {
  ParamId conv1_w = -1, conv1_b = -1;
  ParamId conv2_w = -1, conv2_b = -1;
  ParamId scale_w = -1, scale_b = -1;
  ParamId slope = -1;
};

// Affine map of [features; h] followed by PReLU. Either input half may be
// absent (wx or wh == -1).
struct HeadParams {
  ParamId wx = -1, wh = -1, b = -1, slope = -1;
};

struct ControllerParams {
  ParamId wx = -1, wh = -1, bx = -1, bh = -1, h0 = -1;
};

enum class HeadRole { f, g, psi, f_prior, g_prior, latent_lift };
enum class ControllerKind { shared, prior };

// Parameter ids of one model. The sharing scheme is structural: f serves
// both the generative and recognition queries, g both key extractors, psi
// every prototype extractor; the prior owns f_prior, g_prior and its own
// controller.
struct ModelLayout {
  std::vector<ConvBlockParams> encoder;
  std::vector<ConvBlockParams> decoder;
  ParamId dec_in_w = -1, dec_in_b = -1, dec_in_slope = -1, dec_out_b = -1;
  HeadParams f, g, psi, f_prior, g_prior, latent_lift;
  ControllerParams shared, prior;
  ParamId post_w = -1, post_b = -1;
  ParamId prior_w = -1, prior_b = -1;
  ParamId pseudo_key = -1, pseudo_key_prior = -1, pseudo_proto = -1;

  const HeadParams& head(HeadRole role) const;
  const ControllerParams& controller(ControllerKind kind) const;
};

template <typename T>
ModelLayout declare_parameters(const GMNConfig& config, ParameterStore<T>& store);

// Fan-in scaled normal weights (He init for PReLU layers), zero biases,
// PReLU slopes 0.25.
template <typename T>
void initialize_parameters(const GMNConfig& config, const ModelLayout& layout, ParameterStore<T>& store,
                           std::uint64_t seed);

template <typename T>
class GenerativeMatchingNetwork {
 public:
  GenerativeMatchingNetwork(GMNConfig config, std::uint64_t seed);
  // Adopts trained parameters; throws CheckpointError on a layout mismatch.
  GenerativeMatchingNetwork(GMNConfig config, ParameterStore<T> params);

  const GMNConfig& config() const { return config_; }
  const ModelLayout& layout() const { return layout_; }
  const ParameterStore<T>& parameters() const { return params_; }
  ParameterStore<T>& mutable_parameters() { return params_; }

  ad::Var bind(ad::Tape<T>& tape, ParamId id) const { return gmn::bind(tape, params_, id); }

 private:
  GMNConfig config_;
  ParameterStore<T> params_;
  ModelLayout layout_;
};

// prelu(x, a) = max(x, 0) + a * min(x, 0), on plain values.
template <typename T>
T prelu_value(T x, T slope) {
  return x >= T(0) ? x : slope * x;
}

template <typename T>
ad::Var image_input(ad::Tape<T>& tape, const BinaryImage& image);

// [1, 28, 28] binary image -> [feature_dim] vector.
template <typename T>
ad::Var encode_image(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var image);

// [z; r; h] -> [28, 28] logits.
template <typename T>
ad::Var decode_logits(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var z, ad::Var r,
                      ad::Var h);

// prelu(Wx features + Wh h + b). Throws ContractError when the inputs do
// not match the role (f_prior takes h only; everything else needs
// features, and g/psi/f/g_prior also need h).
template <typename T>
ad::Var embedding_head(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, HeadRole role,
                       ad::Var features, ad::Var h);

template <typename T>
ad::Var gru_step(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ControllerKind kind, ad::Var h,
                 ad::Var input);

}  // namespace gmn
