#pragma once

// Glyph datasets: ingestion of the canonical Omniglot tree and the MNIST
// test set into 28x28 binary images, the on-disk cache, and the episode
// sampler.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmn/image.hpp"

namespace gmn {

struct GlyphClass {
  std::int32_t class_id = 0;
  std::int32_t alphabet_id = 0;
  std::vector<BinaryImage> images;
};

enum class Split { train, test };
const char* to_string(Split s);

struct GlyphDataset {
  std::string name;  // "omniglot" or "mnist"
  Split split = Split::train;
  std::vector<std::string> alphabets;  // this split's alphabets in alphabet_id order
  std::vector<GlyphClass> classes;

  std::size_t image_count() const;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 0 = black ink, 255 = white paper
};

// Area-average of ink coverage onto 28x28, then ink where coverage >= 0.5.
// Throws IngestError naming `origin` unless the input is 105x105.
BinaryImage downscale_binarize(const GrayImage& raw, const std::string& origin = "<memory>");

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

// Binary cache: little-endian header (magic, version, class count), then per
// class: class id, alphabet id, image count, 98-byte packed bitmaps.
void write_cache(const std::filesystem::path& path, const GlyphDataset& data);
GlyphDataset read_cache(const std::filesystem::path& path);
std::uint32_t file_crc32(const std::filesystem::path& path);

inline constexpr int kOmniglotTrainAlphabets = 30;
inline constexpr int kOmniglotTestAlphabets = 20;
inline constexpr int kOmniglotClasses = 1623;
inline constexpr int kOmniglotImagesPerClass = 20;

struct IngestResult {
  std::filesystem::path train_cache;
  std::filesystem::path test_cache;
  std::filesystem::path manifest;
  std::uint32_t train_crc = 0;
  std::uint32_t test_crc = 0;
  bool unchanged = false;  // caches already held identical content
};

// Reads <source>/images_background and <source>/images_evaluation
// (alphabet/character/*.png), checks the canonical counts, writes
// omniglot_train.gmnc, omniglot_test.gmnc and omniglot_manifest.json into
// cache_dir. Every discrepancy is listed in the IngestError message.
IngestResult ingest_omniglot(const std::filesystem::path& source, const std::filesystem::path& cache_dir);

// Builds the dataset pair from already loaded trees; used by the ingester
// and by tests that need count checking without files.
struct RawCharacter {
  std::string alphabet;
  std::string name;
  std::vector<BinaryImage> images;
};
void check_omniglot_counts(const std::vector<std::vector<RawCharacter>>& background_alphabets,
                           const std::vector<std::vector<RawCharacter>>& evaluation_alphabets);

inline constexpr std::uint64_t kMnistBinarizationSeed = 20170302;
inline constexpr int kMnistTestImages = 10000;

// Single Bernoulli binarization of t10k-images-idx3-ubyte with labels from
// t10k-labels-idx1-ubyte; writes mnist_test.gmnc and mnist_manifest.json.
IngestResult ingest_mnist_test(const std::filesystem::path& source_dir, const std::filesystem::path& cache_dir,
                               std::uint64_t seed = kMnistBinarizationSeed);
GlyphDataset binarize_mnist(std::span<const std::uint8_t> gray, std::span<const std::uint8_t> labels, int count,
                            std::uint64_t seed);

// Procedural stand-in for the Omniglot tree: 50 alphabets of stroke glyphs
// with the canonical class counts and 20 105x105 drawings per character,
// written in the images_background / images_evaluation layout.
void write_synthetic_omniglot(const std::filesystem::path& root, std::uint64_t seed);

struct EpisodeItem {
  BinaryImage image;
  std::int32_t class_id = 0;
};

struct Episode {
  std::vector<EpisodeItem> items;
  std::vector<BinaryImage> images() const;
  std::vector<std::int32_t> labels() const;
};

// C distinct classes, then per slot a uniform class and an image drawn
// without replacement inside the class until the class runs out.
Episode sample_episode(const GlyphDataset& data, int length, int classes, std::mt19937_64& rng);

// Independent stream for (base seed, worker or unit index).
std::mt19937_64 derive_rng(std::uint64_t base_seed, std::uint64_t stream);

// Cache directory from GMN_DATA_ROOT, falling back to "data/cache".
std::filesystem::path default_cache_root();

}  // namespace gmn
