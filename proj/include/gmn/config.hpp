#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace gmn {

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;

// One residual block (kernel1, kernel2, filters, stride). Encoder blocks
// convolve, decoder blocks use transposed convolutions in conv1.
struct ResidualBlockSpec {
  int kernel1_w = 1, kernel1_h = 1;
  int kernel2_w = 1, kernel2_h = 1;
  int filters = 1;
  int stride = 1;

  bool operator==(const ResidualBlockSpec&) const = default;
};

std::vector<ResidualBlockSpec> paper_encoder_blocks();
std::vector<ResidualBlockSpec> paper_decoder_blocks();

enum class Variant { full, no_attention, vae };
enum class PriorMode { data_dependent, standard_normal };

const char* to_string(Variant v);
const char* to_string(PriorMode m);
Variant parse_variant(const std::string& s);
PriorMode parse_prior_mode(const std::string& s);

struct GMNConfig {
  std::vector<ResidualBlockSpec> encoder_blocks = paper_encoder_blocks();
  std::vector<ResidualBlockSpec> decoder_blocks = paper_decoder_blocks();
  int decoder_seed_channels = 32;  // channels of the 3x3 tensor fed to the decoder
  int match_dim = 200;             // matching and prototype spaces
  int state_dim = 200;             // controller hidden state
  int latent_dim = 64;
  int episode_length = 20;
  int max_classes = 2;
  int shared_steps = 4;
  int prior_steps = 1;
  int pseudo_count = 1;
  Variant variant = Variant::full;
  PriorMode prior_mode = PriorMode::data_dependent;

  // Throws ConfigError, including when the encoder/decoder shape chains do
  // not close (encoder must end where the decoder starts, decoder must end
  // at 28).
  void validate() const;

  std::vector<int> encoder_sides() const;  // input side first
  std::vector<int> decoder_sides() const;  // seed side first
  int feature_dim() const;                 // flattened encoder output
  int feature_side() const;

  // Full-size architecture with the paper's block lists and defaults.
  static GMNConfig paper();
  // Desk-scale: halved channels, T = 10, C = 1, D_z = 16.
  static GMNConfig reduced();
  // Few-hundred-parameter model for finite-difference checks.
  static GMNConfig tiny();

  bool operator==(const GMNConfig&) const = default;
};

void to_json(nlohmann::json& j, const ResidualBlockSpec& s);
void from_json(const nlohmann::json& j, ResidualBlockSpec& s);
void to_json(nlohmann::json& j, const GMNConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, GMNConfig& c);

}  // namespace gmn
