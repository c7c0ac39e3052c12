#include "gmn/config.hpp"

#include "gmn/errors.hpp"

namespace gmn {

std::vector<ResidualBlockSpec> paper_encoder_blocks() {
  return {{4, 4, 3, 3, 16, 2}, {3, 3, 3, 3, 16, 2}, {2, 2, 2, 2, 32, 2}};
}

std::vector<ResidualBlockSpec> paper_decoder_blocks() {
  return {{2, 2, 2, 2, 32, 2}, {3, 3, 3, 3, 16, 2}, {4, 4, 3, 3, 16, 2}};
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_attention: return "no_attention";
    case Variant::vae: return "vae";
  }
  return "?";
}

const char* to_string(PriorMode m) {
  return m == PriorMode::data_dependent ? "data_dependent" : "standard_normal";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_attention") return Variant::no_attention;
  if (s == "vae") return Variant::vae;
  throw ConfigError("unknown variant '" + s + "' (expected full, no_attention or vae)");
}

PriorMode parse_prior_mode(const std::string& s) {
  if (s == "data_dependent") return PriorMode::data_dependent;
  if (s == "standard_normal") return PriorMode::standard_normal;
  throw ConfigError("unknown prior_mode '" + s + "' (expected data_dependent or standard_normal)");
}

std::vector<int> GMNConfig::encoder_sides() const {
  std::vector<int> sides{kImageSide};
  for (const auto& b : encoder_blocks) sides.push_back((sides.back() - b.kernel1_h) / b.stride + 1);
  return sides;
}

std::vector<int> GMNConfig::decoder_sides() const {
  std::vector<int> sides{feature_side()};
  for (const auto& b : decoder_blocks) sides.push_back((sides.back() - 1) * b.stride + b.kernel1_h);
  return sides;
}

int GMNConfig::feature_side() const { return encoder_sides().back(); }

int GMNConfig::feature_dim() const {
  const int side = feature_side();
  return encoder_blocks.back().filters * side * side;
}

void GMNConfig::validate() const {
  auto check_block = [](const ResidualBlockSpec& b, const char* where) {
    if (b.stride < 1 || b.filters < 1 || b.kernel1_w < 1 || b.kernel1_h < 1 || b.kernel2_w < 1 ||
        b.kernel2_h < 1)
      throw ConfigError(std::string(where) + " block needs stride, filters and kernel sides >= 1");
    if (b.kernel1_w != b.kernel1_h)
      throw ConfigError(std::string(where) + " block conv1 must be square");
  };
  if (encoder_blocks.empty() || decoder_blocks.empty()) throw ConfigError("encoder and decoder need blocks");
  for (const auto& b : encoder_blocks) check_block(b, "encoder");
  for (const auto& b : decoder_blocks) check_block(b, "decoder");
  for (int side : encoder_sides())
    if (side < 1) throw ConfigError("encoder shape chain collapses below 1 pixel");
  if (decoder_sides().back() != kImageSide)
    throw ConfigError("decoder shape chain ends at " + std::to_string(decoder_sides().back()) +
                      ", expected " + std::to_string(kImageSide));
  if (decoder_seed_channels < 1) throw ConfigError("decoder_seed_channels must be >= 1");
  if (match_dim < 1 || state_dim < 1 || latent_dim < 1) throw ConfigError("dimensions must be >= 1");
  if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
  if (max_classes < 1) throw ConfigError("max_classes must be >= 1");
  if (shared_steps < 1 || prior_steps < 1) throw ConfigError("attention step counts must be >= 1");
  if (pseudo_count != 0 && pseudo_count != 1) throw ConfigError("pseudo_count must be 0 or 1");
  if (variant == Variant::vae && prior_mode == PriorMode::data_dependent && pseudo_count == 0)
    throw ConfigError("vae variant with a learned prior needs the pseudo-input");
}

GMNConfig GMNConfig::paper() { return GMNConfig{}; }

GMNConfig GMNConfig::reduced() {
  GMNConfig c;
  for (auto& b : c.encoder_blocks) b.filters /= 2;
  for (auto& b : c.decoder_blocks) b.filters /= 2;
  c.decoder_seed_channels = 16;
  c.latent_dim = 16;
  c.episode_length = 10;
  c.max_classes = 1;
  return c;
}

GMNConfig GMNConfig::tiny() {
  GMNConfig c;
  for (auto& b : c.encoder_blocks) b.filters = 2;
  for (auto& b : c.decoder_blocks) b.filters = 2;
  c.decoder_seed_channels = 2;
  c.match_dim = 8;
  c.state_dim = 8;
  c.latent_dim = 2;
  c.episode_length = 3;
  c.shared_steps = 2;
  return c;
}

void to_json(nlohmann::json& j, const ResidualBlockSpec& s) {
  j = nlohmann::json::array({s.kernel1_w, s.kernel1_h, s.kernel2_w, s.kernel2_h, s.filters, s.stride});
}

void from_json(const nlohmann::json& j, ResidualBlockSpec& s) {
  if (!j.is_array() || j.size() != 6) throw ConfigError("block spec must be [k1w,k1h,k2w,k2h,filters,stride]");
  s = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>(), j[4].get<int>(), j[5].get<int>()};
}

void to_json(nlohmann::json& j, const GMNConfig& c) {
  j = nlohmann::json{{"encoder_blocks", c.encoder_blocks},
                     {"decoder_blocks", c.decoder_blocks},
                     {"decoder_seed_channels", c.decoder_seed_channels},
                     {"match_dim", c.match_dim},
                     {"state_dim", c.state_dim},
                     {"latent_dim", c.latent_dim},
                     {"episode_length", c.episode_length},
                     {"max_classes", c.max_classes},
                     {"shared_steps", c.shared_steps},
                     {"prior_steps", c.prior_steps},
                     {"pseudo_count", c.pseudo_count},
                     {"variant", to_string(c.variant)},
                     {"prior_mode", to_string(c.prior_mode)}};
}

void from_json(const nlohmann::json& j, GMNConfig& c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("encoder_blocks", c.encoder_blocks);
  take("decoder_blocks", c.decoder_blocks);
  take("decoder_seed_channels", c.decoder_seed_channels);
  take("match_dim", c.match_dim);
  take("state_dim", c.state_dim);
  take("latent_dim", c.latent_dim);
  take("episode_length", c.episode_length);
  take("max_classes", c.max_classes);
  take("shared_steps", c.shared_steps);
  take("prior_steps", c.prior_steps);
  take("pseudo_count", c.pseudo_count);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("prior_mode")) c.prior_mode = parse_prior_mode(j.at("prior_mode").get<std::string>());
}

}  // namespace gmn
