#include "gmn/neural_core.hpp"

#include <cmath>

#include "gmn/errors.hpp"

namespace gmn {

namespace {

constexpr double kInitialSlope = 0.25;
constexpr double kOutputGain = 0.1;

std::string block_name(const char* prefix, std::size_t i, const char* part) {
  return std::string(prefix) + ".b" + std::to_string(i) + "." + part;
}

ad::Conv2dOptions same_padding(const ad::Shape& weight) {
  ad::Conv2dOptions opt;
  opt.pad_top = (weight[2] - 1) / 2;
  opt.pad_bottom = weight[2] - 1 - opt.pad_top;
  opt.pad_left = (weight[3] - 1) / 2;
  opt.pad_right = weight[3] - 1 - opt.pad_left;
  return opt;
}

}  // namespace

const HeadParams& ModelLayout::head(HeadRole role) const {
  switch (role) {
    case HeadRole::f: return f;
    case HeadRole::g: return g;
    case HeadRole::psi: return psi;
    case HeadRole::f_prior: return f_prior;
    case HeadRole::g_prior: return g_prior;
    case HeadRole::latent_lift: return latent_lift;
  }
  throw ContractError("unknown head role");
}

const ControllerParams& ModelLayout::controller(ControllerKind kind) const {
  return kind == ControllerKind::shared ? shared : prior;
}

template <typename T>
ModelLayout declare_parameters(const GMNConfig& config, ParameterStore<T>& store) {
  config.validate();
  ModelLayout L;
  const int F = config.feature_dim();
  const int M = config.match_dim;
  const int S = config.state_dim;
  const int Z = config.latent_dim;
  const int side = config.feature_side();
  const bool learned_prior = config.prior_mode == PriorMode::data_dependent;

  int channels = 1;
  for (std::size_t i = 0; i < config.encoder_blocks.size(); ++i) {
    const auto& b = config.encoder_blocks[i];
    ConvBlockParams p;
    p.conv1_w = store.add(block_name("enc", i, "conv1.w"), {b.filters, channels, b.kernel1_h, b.kernel1_w},
                          ParamGroup::encoder);
    p.conv1_b = store.add(block_name("enc", i, "conv1.b"), {b.filters}, ParamGroup::encoder);
    p.conv2_w = store.add(block_name("enc", i, "conv2.w"), {b.filters, b.filters, b.kernel2_h, b.kernel2_w},
                          ParamGroup::encoder);
    p.conv2_b = store.add(block_name("enc", i, "conv2.b"), {b.filters}, ParamGroup::encoder);
    p.scale_w = store.add(block_name("enc", i, "scale.w"), {b.filters, channels, 1, 1}, ParamGroup::encoder);
    p.scale_b = store.add(block_name("enc", i, "scale.b"), {b.filters}, ParamGroup::encoder);
    p.slope = store.add(block_name("enc", i, "slope"), {b.filters}, ParamGroup::encoder);
    L.encoder.push_back(p);
    channels = b.filters;
  }

  const int seed = config.decoder_seed_channels;
  L.dec_in_w = store.add("dec.in.w", {seed * side * side, Z + M + S}, ParamGroup::decoder);
  L.dec_in_b = store.add("dec.in.b", {seed * side * side}, ParamGroup::decoder);
  L.dec_in_slope = store.add("dec.in.slope", {seed}, ParamGroup::decoder);
  channels = seed;
  for (std::size_t i = 0; i < config.decoder_blocks.size(); ++i) {
    const auto& b = config.decoder_blocks[i];
    ConvBlockParams p;
    p.conv1_w = store.add(block_name("dec", i, "conv1.w"), {channels, b.filters, b.kernel1_h, b.kernel1_w},
                          ParamGroup::decoder);
    p.conv1_b = store.add(block_name("dec", i, "conv1.b"), {b.filters}, ParamGroup::decoder);
    p.conv2_w = store.add(block_name("dec", i, "conv2.w"), {b.filters, b.filters, b.kernel2_h, b.kernel2_w},
                          ParamGroup::decoder);
    p.conv2_b = store.add(block_name("dec", i, "conv2.b"), {b.filters}, ParamGroup::decoder);
    p.scale_w = store.add(block_name("dec", i, "scale.w"), {b.filters, channels, 1, 1}, ParamGroup::decoder);
    p.scale_b = store.add(block_name("dec", i, "scale.b"), {b.filters}, ParamGroup::decoder);
    p.slope = store.add(block_name("dec", i, "slope"), {b.filters}, ParamGroup::decoder);
    L.decoder.push_back(p);
    channels = b.filters;
  }
  L.dec_out_b = store.add("dec.out.b", {1}, ParamGroup::decoder);

  auto head = [&](const std::string& name, int in_x, int in_h, int out, ParamGroup group) {
    HeadParams h;
    if (in_x > 0) h.wx = store.add(name + ".wx", {out, in_x}, group);
    if (in_h > 0) h.wh = store.add(name + ".wh", {out, in_h}, group);
    h.b = store.add(name + ".b", {out}, group);
    h.slope = store.add(name + ".slope", {out}, group);
    return h;
  };
  L.f = head("head.f", F, S, M, ParamGroup::heads);
  L.g = head("head.g", F, S, M, ParamGroup::heads);
  L.psi = head("head.psi", F, S, M, ParamGroup::heads);
  L.latent_lift = head("head.lift", Z, 0, F, ParamGroup::heads);

  auto controller = [&](const std::string& name) {
    ControllerParams c;
    c.wx = store.add(name + ".wx", {3 * S, M}, ParamGroup::controllers);
    c.wh = store.add(name + ".wh", {3 * S, S}, ParamGroup::controllers);
    c.bx = store.add(name + ".bx", {3 * S}, ParamGroup::controllers);
    c.bh = store.add(name + ".bh", {3 * S}, ParamGroup::controllers);
    c.h0 = store.add(name + ".h0", {S}, ParamGroup::controllers);
    return c;
  };
  L.shared = controller("ctrl.shared");

  L.post_w = store.add("post.w", {2 * Z, M + S}, ParamGroup::recognition_heads);
  L.post_b = store.add("post.b", {2 * Z}, ParamGroup::recognition_heads);

  if (learned_prior) {
    L.prior = controller("ctrl.prior");
    L.f_prior = head("head.f_prior", 0, S, M, ParamGroup::prior_heads);
    L.g_prior = head("head.g_prior", F, S, M, ParamGroup::prior_heads);
    L.prior_w = store.add("prior.w", {2 * Z, M + S}, ParamGroup::prior_heads);
    L.prior_b = store.add("prior.b", {2 * Z}, ParamGroup::prior_heads);
  }

  if (config.pseudo_count == 1) {
    L.pseudo_key = store.add("pseudo.key", {M}, ParamGroup::pseudo);
    L.pseudo_proto = store.add("pseudo.proto", {M}, ParamGroup::pseudo);
    if (learned_prior) L.pseudo_key_prior = store.add("pseudo.key_prior", {M}, ParamGroup::pseudo);
  }
  return L;
}

template <typename T>
void initialize_parameters(const GMNConfig& config, const ModelLayout& L, ParameterStore<T>& store,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill_normal = [&](ParamId id, double stddev) {
    if (id < 0) return;
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : store.data(id)) v = T(dist(rng));
  };
  auto fill = [&](ParamId id, double value) {
    if (id < 0) return;
    for (T& v : store.data(id)) v = T(value);
  };
  const double prelu_gain = 2.0 / (1.0 + kInitialSlope * kInitialSlope);
  auto he = [&](ParamId id, double fan_in, double gain = 1.0) {
    fill_normal(id, gain * std::sqrt(prelu_gain / std::max(1.0, fan_in)));
  };

  auto conv_block = [&](const ConvBlockParams& p, const ResidualBlockSpec& spec, int in_channels, bool transposed,
                        double gain) {
    double fan1 = double(in_channels) * spec.kernel1_h * spec.kernel1_w;
    if (transposed) fan1 /= double(spec.stride * spec.stride);
    he(p.conv1_w, fan1, gain);
    he(p.conv2_w, double(spec.filters) * spec.kernel2_h * spec.kernel2_w, gain);
    he(p.scale_w, in_channels, gain);
    fill(p.conv1_b, 0.0);
    fill(p.conv2_b, 0.0);
    fill(p.scale_b, 0.0);
    fill(p.slope, kInitialSlope);
  };
  int channels = 1;
  for (std::size_t i = 0; i < L.encoder.size(); ++i) {
    conv_block(L.encoder[i], config.encoder_blocks[i], channels, false, 1.0);
    channels = config.encoder_blocks[i].filters;
  }
  const int M = config.match_dim, S = config.state_dim, Z = config.latent_dim, F = config.feature_dim();
  he(L.dec_in_w, Z + M + S);
  fill(L.dec_in_b, 0.0);
  fill(L.dec_in_slope, kInitialSlope);
  channels = config.decoder_seed_channels;
  for (std::size_t i = 0; i < L.decoder.size(); ++i) {
    // The last block feeds a sum over channels that becomes the logits.
    const bool last = i + 1 == L.decoder.size();
    conv_block(L.decoder[i], config.decoder_blocks[i], channels, true,
               last ? kOutputGain / std::sqrt(double(config.decoder_blocks[i].filters)) : 1.0);
    channels = config.decoder_blocks[i].filters;
  }
  fill(L.dec_out_b, 0.0);

  auto head = [&](const HeadParams& h, int fan_in) {
    he(h.wx, fan_in);
    he(h.wh, fan_in);
    fill(h.b, 0.0);
    fill(h.slope, kInitialSlope);
  };
  head(L.f, F + S);
  head(L.g, F + S);
  head(L.psi, F + S);
  head(L.latent_lift, Z);
  head(L.f_prior, S);
  head(L.g_prior, F + S);

  auto controller = [&](const ControllerParams& c) {
    fill_normal(c.wx, 1.0 / std::sqrt(double(M)));
    fill_normal(c.wh, 1.0 / std::sqrt(double(S)));
    fill(c.bx, 0.0);
    fill(c.bh, 0.0);
    fill(c.h0, 0.0);
  };
  controller(L.shared);
  controller(L.prior);

  fill_normal(L.post_w, 0.1 / std::sqrt(double(M + S)));
  fill(L.post_b, 0.0);
  fill_normal(L.prior_w, 0.1 / std::sqrt(double(M + S)));
  fill(L.prior_b, 0.0);

  fill_normal(L.pseudo_key, 0.1);
  fill_normal(L.pseudo_proto, 0.1);
  fill_normal(L.pseudo_key_prior, 0.1);
}

template <typename T>
GenerativeMatchingNetwork<T>::GenerativeMatchingNetwork(GMNConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  layout_ = declare_parameters(config_, params_);
  initialize_parameters(config_, layout_, params_, seed);
}

template <typename T>
GenerativeMatchingNetwork<T>::GenerativeMatchingNetwork(GMNConfig config, ParameterStore<T> params)
    : config_(std::move(config)) {
  layout_ = declare_parameters(config_, params_);
  if (!params_.same_layout(params))
    throw CheckpointError("parameter tensors do not match the configured architecture");
  params_ = std::move(params);
}

template <typename T>
ad::Var image_input(ad::Tape<T>& tape, const BinaryImage& image) {
  std::vector<T> v(kImagePixels);
  for (int i = 0; i < kImagePixels; ++i) v[i] = T(image.pixels[i]);
  return tape.constant(std::move(v), {1, kImageSide, kImageSide});
}

template <typename T>
ad::Var encode_image(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var image) {
  const GMNConfig& cfg = model.config();
  const ad::Shape expected{1, kImageSide, kImageSide};
  if (tape.shape(image) != expected)
    throw ShapeError("encode_image: expected " + ad::to_string(expected) + ", got " +
                     ad::to_string(tape.shape(image)));
  ad::Var x = image;
  for (std::size_t i = 0; i < cfg.encoder_blocks.size(); ++i) {
    const auto& spec = cfg.encoder_blocks[i];
    const auto& p = model.layout().encoder[i];
    ad::Conv2dOptions strided;
    strided.stride = spec.stride;
    ad::Var h = ad::conv2d(tape, x, model.bind(tape, p.conv1_w), model.bind(tape, p.conv1_b), strided);
    ad::Var c2 = ad::conv2d(tape, h, model.bind(tape, p.conv2_w), model.bind(tape, p.conv2_b),
                            same_padding(model.parameters().shape(p.conv2_w)));
    ad::Var y = ad::prelu(tape, ad::add(tape, c2, h), model.bind(tape, p.slope));
    ad::Var scaled = ad::conv2d(tape, x, model.bind(tape, p.scale_w), model.bind(tape, p.scale_b), {});
    ad::Var skip = ad::avg_pool2d(tape, scaled, spec.kernel1_h, spec.stride);
    x = ad::add(tape, y, skip);
  }
  return ad::reshape(tape, x, {tape.size(x)});
}

template <typename T>
ad::Var decode_logits(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ad::Var z, ad::Var r,
                      ad::Var h) {
  const GMNConfig& cfg = model.config();
  const ModelLayout& L = model.layout();
  if (tape.size(z) != cfg.latent_dim || tape.size(r) != cfg.match_dim || tape.size(h) != cfg.state_dim)
    throw ShapeError("decode_logits: got z" + ad::to_string(tape.shape(z)) + " r" + ad::to_string(tape.shape(r)) +
                     " h" + ad::to_string(tape.shape(h)));
  const ad::Var parts[] = {z, r, h};
  ad::Var input = ad::concat<T>(tape, parts);
  ad::Var seed = ad::affine(tape, model.bind(tape, L.dec_in_w), model.bind(tape, L.dec_in_b), input);
  const int side = cfg.feature_side();
  ad::Var x = ad::reshape(tape, seed, {cfg.decoder_seed_channels, side, side});
  x = ad::prelu(tape, x, model.bind(tape, L.dec_in_slope));
  for (std::size_t i = 0; i < cfg.decoder_blocks.size(); ++i) {
    const auto& spec = cfg.decoder_blocks[i];
    const auto& p = L.decoder[i];
    ad::Var up = ad::conv_transpose2d(tape, x, model.bind(tape, p.conv1_w), model.bind(tape, p.conv1_b), spec.stride);
    ad::Var c2 = ad::conv2d(tape, up, model.bind(tape, p.conv2_w), model.bind(tape, p.conv2_b),
                            same_padding(model.parameters().shape(p.conv2_w)));
    ad::Var y = ad::prelu(tape, ad::add(tape, c2, up), model.bind(tape, p.slope));
    ad::Var scaled = ad::conv2d(tape, x, model.bind(tape, p.scale_w), model.bind(tape, p.scale_b), {});
    const int out_side = tape.shape(up)[1];
    ad::Var skip = ad::resize_bilinear(tape, scaled, out_side, out_side);
    x = ad::add(tape, y, skip);
  }
  return ad::add_scalar(tape, ad::sum_channels(tape, x), model.bind(tape, L.dec_out_b));
}

template <typename T>
ad::Var embedding_head(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, HeadRole role,
                       ad::Var features, ad::Var h) {
  const HeadParams& p = model.layout().head(role);
  if (p.b < 0) throw ContractError("embedding_head: role not present in this model configuration");
  const bool wants_features = p.wx >= 0;
  const bool wants_state = p.wh >= 0;
  if (wants_features != features.valid())
    throw ContractError(wants_features ? "embedding_head: features required for this role"
                                       : "embedding_head: this role takes only the controller state");
  if (wants_state && !h.valid()) throw ContractError("embedding_head: controller state required for this role");
  if (!wants_state && h.valid()) throw ContractError("embedding_head: this role takes no controller state");

  ad::Var pre{};
  if (wants_features) pre = ad::affine(tape, model.bind(tape, p.wx), model.bind(tape, p.b), features);
  if (wants_state) {
    ad::Var hs = wants_features ? ad::matvec(tape, model.bind(tape, p.wh), h)
                                : ad::affine(tape, model.bind(tape, p.wh), model.bind(tape, p.b), h);
    pre = wants_features ? ad::add(tape, pre, hs) : hs;
  }
  return ad::prelu(tape, pre, model.bind(tape, p.slope));
}

template <typename T>
ad::Var gru_step(ad::Tape<T>& tape, const GenerativeMatchingNetwork<T>& model, ControllerKind kind, ad::Var h,
                 ad::Var input) {
  const ControllerParams& c = model.layout().controller(kind);
  if (c.wx < 0) throw ContractError("gru_step: controller not present in this model configuration");
  ad::Var gx = ad::affine(tape, model.bind(tape, c.wx), model.bind(tape, c.bx), input);
  ad::Var gh = ad::affine(tape, model.bind(tape, c.wh), model.bind(tape, c.bh), h);
  return ad::gru_cell(tape, gx, gh, h);
}

#define GMN_INSTANTIATE_CORE(T)                                                                            \
  template ModelLayout declare_parameters<T>(const GMNConfig&, ParameterStore<T>&);                        \
  template void initialize_parameters<T>(const GMNConfig&, const ModelLayout&, ParameterStore<T>&,         \
                                         std::uint64_t);                                                   \
  template class GenerativeMatchingNetwork<T>;                                                             \
  template ad::Var image_input<T>(ad::Tape<T>&, const BinaryImage&);                                       \
  template ad::Var encode_image<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ad::Var);            \
  template ad::Var decode_logits<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ad::Var, ad::Var,   \
                                    ad::Var);                                                              \
  template ad::Var embedding_head<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, HeadRole, ad::Var, \
                                     ad::Var);                                                             \
  template ad::Var gru_step<T>(ad::Tape<T>&, const GenerativeMatchingNetwork<T>&, ControllerKind, ad::Var, \
                               ad::Var);

GMN_INSTANTIATE_CORE(float)
GMN_INSTANTIATE_CORE(double)

#undef GMN_INSTANTIATE_CORE

}  // namespace gmn
