#include "gmn/data.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gmn/errors.hpp"

namespace gmn {

namespace fs = std::filesystem;

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::size_t GlyphDataset::image_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.images.size();
  return n;
}

std::vector<BinaryImage> Episode::images() const {
  std::vector<BinaryImage> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.image);
  return out;
}

std::vector<std::int32_t> Episode::labels() const {
  std::vector<std::int32_t> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.class_id);
  return out;
}

BinaryImage downscale_binarize(const GrayImage& raw, const std::string& origin) {
  constexpr int kRawSide = 105;
  if (raw.width != kRawSide || raw.height != kRawSide || raw.pixels.size() != std::size_t(kRawSide * kRawSide))
    throw IngestError(origin + ": expected a 105x105 glyph, got " + std::to_string(raw.width) + "x" +
                      std::to_string(raw.height));
  // Each output pixel covers a 3.75 x 3.75 window; partial source pixels
  // contribute by their overlap.
  const double cell = double(kRawSide) / kImageSide;
  BinaryImage out;
  for (int r = 0; r < kImageSide; ++r) {
    const double y0 = r * cell, y1 = (r + 1) * cell;
    for (int c = 0; c < kImageSide; ++c) {
      const double x0 = c * cell, x1 = (c + 1) * cell;
      double ink = 0;
      for (int y = int(y0); y < std::min(kRawSide, int(std::ceil(y1))); ++y) {
        const double wy = std::min(y1, y + 1.0) - std::max(y0, double(y));
        for (int x = int(x0); x < std::min(kRawSide, int(std::ceil(x1))); ++x) {
          const double wx = std::min(x1, x + 1.0) - std::max(x0, double(x));
          ink += wy * wx * (1.0 - raw.pixels[y * kRawSide + x] / 255.0);
        }
      }
      out.at(r, c) = ink / (cell * cell) >= 0.5 ? 1 : 0;
    }
  }
  return out;
}

GrayImage read_png_gray(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IngestError(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = int(image.width);
  out.height = int(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IngestError(path.string() + ": " + msg);
  }
  return out;
}

void write_png_gray(const fs::path& path, const GrayImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width);
  image.height = png_uint_32(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IngestError(path.string() + ": " + image.message);
}

namespace {

constexpr std::array<char, 4> kCacheMagic{'G', 'M', 'N', 'C'};
constexpr std::uint32_t kCacheVersion = 2;
constexpr int kPackedBytes = kImagePixels / 8;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}

template <typename U>
U get(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(U) > in.size()) throw IngestError(path.string() + ": truncated cache");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return U(v);
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, std::uint32_t(s.size()));
  out += s;
}

std::string get_string(const std::string& bytes, std::size_t& pos, const fs::path& path) {
  const auto n = get<std::uint32_t>(bytes, pos, path);
  if (pos + n > bytes.size()) throw IngestError(path.string() + ": truncated cache");
  std::string s = bytes.substr(pos, n);
  pos += n;
  return s;
}

std::string serialize(const GlyphDataset& data) {
  std::string out(kCacheMagic.begin(), kCacheMagic.end());
  put<std::uint32_t>(out, kCacheVersion);
  put_string(out, data.name);
  put<std::uint32_t>(out, data.split == Split::train ? 0u : 1u);
  put<std::uint32_t>(out, std::uint32_t(data.alphabets.size()));
  for (const auto& a : data.alphabets) put_string(out, a);
  put<std::uint32_t>(out, std::uint32_t(data.classes.size()));
  for (const auto& c : data.classes) {
    put<std::int32_t>(out, c.class_id);
    put<std::int32_t>(out, c.alphabet_id);
    put<std::uint32_t>(out, std::uint32_t(c.images.size()));
    for (const auto& img : c.images) {
      std::array<std::uint8_t, kPackedBytes> packed{};
      for (int i = 0; i < kImagePixels; ++i)
        if (img.pixels[i]) packed[i / 8] |= std::uint8_t(0x80 >> (i % 8));
      out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
    }
  }
  return out;
}

std::uint32_t crc_of(const std::string& bytes) {
  return std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), uInt(bytes.size())));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IngestError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

// Writes the cache unless an identical one is already present.
bool write_if_changed(const fs::path& path, const std::string& bytes) {
  if (fs::exists(path) && crc_of(slurp(path)) == crc_of(bytes) && fs::file_size(path) == bytes.size()) return false;
  spit(path, bytes);
  return true;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<RawCharacter>> load_split(const fs::path& dir, std::vector<std::string>& problems) {
  std::vector<std::vector<RawCharacter>> alphabets;
  if (!fs::is_directory(dir)) {
    problems.push_back("missing directory " + dir.string());
    return alphabets;
  }
  for (const auto& alphabet : sorted_entries(dir, true)) {
    std::vector<RawCharacter> chars;
    for (const auto& character : sorted_entries(alphabet, true)) {
      RawCharacter rc;
      rc.alphabet = alphabet.filename().string();
      for (const auto& png : sorted_entries(character, false))
        rc.images.push_back(downscale_binarize(read_png_gray(png), png.string()));
      rc.name = character.string();
      chars.push_back(std::move(rc));
    }
    alphabets.push_back(std::move(chars));
  }
  return alphabets;
}

std::vector<std::string> count_problems(const std::vector<std::vector<RawCharacter>>& background,
                                        const std::vector<std::vector<RawCharacter>>& evaluation) {
  std::vector<std::string> problems;
  if (background.size() != std::size_t(kOmniglotTrainAlphabets))
    problems.push_back("background split has " + std::to_string(background.size()) + " alphabets, expected " +
                       std::to_string(kOmniglotTrainAlphabets));
  if (evaluation.size() != std::size_t(kOmniglotTestAlphabets))
    problems.push_back("evaluation split has " + std::to_string(evaluation.size()) + " alphabets, expected " +
                       std::to_string(kOmniglotTestAlphabets));
  std::size_t classes = 0;
  for (const auto* split : {&background, &evaluation})
    for (const auto& alphabet : *split) {
      if (alphabet.empty()) problems.push_back("an alphabet has no characters");
      for (const auto& c : alphabet) {
        ++classes;
        if (int(c.images.size()) != kOmniglotImagesPerClass)
          problems.push_back((c.name.empty() ? c.alphabet : c.name) + ": " + std::to_string(c.images.size()) +
                             " images, expected " + std::to_string(kOmniglotImagesPerClass));
      }
    }
  if (classes != std::size_t(kOmniglotClasses))
    problems.push_back(std::to_string(classes) + " classes in total, expected " + std::to_string(kOmniglotClasses));
  return problems;
}

std::string join_problems(const std::vector<std::string>& problems) {
  std::string msg = "Omniglot tree does not match the canonical split:";
  for (const auto& p : problems) msg += "\n  - " + p;
  return msg;
}

GlyphDataset to_dataset(const std::vector<std::vector<RawCharacter>>& alphabets, Split split, int first_class,
                        int first_alphabet) {
  GlyphDataset data;
  data.name = "omniglot";
  data.split = split;
  int class_id = first_class;
  for (std::size_t a = 0; a < alphabets.size(); ++a) {
    data.alphabets.push_back(alphabets[a].empty() ? std::string() : alphabets[a].front().alphabet);
    for (const auto& c : alphabets[a]) {
      GlyphClass gc;
      gc.class_id = class_id++;
      gc.alphabet_id = first_alphabet + std::int32_t(a);
      gc.images = c.images;
      data.classes.push_back(std::move(gc));
    }
  }
  return data;
}

}  // namespace

void write_cache(const fs::path& path, const GlyphDataset& data) { spit(path, serialize(data)); }

GlyphDataset read_cache(const fs::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() < 12 || !std::equal(kCacheMagic.begin(), kCacheMagic.end(), bytes.begin()))
    throw IngestError(path.string() + ": not a glyph cache");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, path);
  if (version != kCacheVersion)
    throw IngestError(path.string() + ": cache version " + std::to_string(version) + ", expected " +
                      std::to_string(kCacheVersion));
  GlyphDataset data;
  data.name = get_string(bytes, pos, path);
  data.split = get<std::uint32_t>(bytes, pos, path) == 0 ? Split::train : Split::test;
  const auto alphabets = get<std::uint32_t>(bytes, pos, path);
  for (std::uint32_t a = 0; a < alphabets; ++a) data.alphabets.push_back(get_string(bytes, pos, path));
  const auto classes = get<std::uint32_t>(bytes, pos, path);
  for (std::uint32_t k = 0; k < classes; ++k) {
    GlyphClass c;
    c.class_id = get<std::int32_t>(bytes, pos, path);
    c.alphabet_id = get<std::int32_t>(bytes, pos, path);
    const auto count = get<std::uint32_t>(bytes, pos, path);
    if (pos + std::size_t(count) * kPackedBytes > bytes.size()) throw IngestError(path.string() + ": truncated cache");
    c.images.resize(count);
    for (auto& img : c.images) {
      for (int i = 0; i < kImagePixels; ++i) img.pixels[i] = (std::uint8_t(bytes[pos + i / 8]) >> (7 - i % 8)) & 1;
      pos += kPackedBytes;
    }
    data.classes.push_back(std::move(c));
  }
  if (pos != bytes.size()) throw IngestError(path.string() + ": trailing bytes after the last class");
  return data;
}

std::uint32_t file_crc32(const fs::path& path) { return crc_of(slurp(path)); }

void check_omniglot_counts(const std::vector<std::vector<RawCharacter>>& background,
                           const std::vector<std::vector<RawCharacter>>& evaluation) {
  auto problems = count_problems(background, evaluation);
  if (!problems.empty()) throw IngestError(join_problems(problems));
}

IngestResult ingest_omniglot(const fs::path& source, const fs::path& cache_dir) {
  std::vector<std::string> problems;
  auto background = load_split(source / "images_background", problems);
  auto evaluation = load_split(source / "images_evaluation", problems);
  for (auto& p : count_problems(background, evaluation)) problems.push_back(p);
  if (!problems.empty()) throw IngestError(join_problems(problems));

  GlyphDataset train = to_dataset(background, Split::train, 0, 0);
  GlyphDataset test = to_dataset(evaluation, Split::test, int(train.classes.size()), kOmniglotTrainAlphabets);
  const std::string train_bytes = serialize(train), test_bytes = serialize(test);

  IngestResult result;
  result.train_cache = cache_dir / "omniglot_train.gmnc";
  result.test_cache = cache_dir / "omniglot_test.gmnc";
  result.manifest = cache_dir / "omniglot_manifest.json";
  result.train_crc = crc_of(train_bytes);
  result.test_crc = crc_of(test_bytes);
  const bool wrote_train = write_if_changed(result.train_cache, train_bytes);
  const bool wrote_test = write_if_changed(result.test_cache, test_bytes);
  result.unchanged = !wrote_train && !wrote_test;

  auto split_json = [](const GlyphDataset& d, const fs::path& file, std::uint32_t crc) {
    return nlohmann::json{{"file", file.filename().string()},
                          {"crc32", crc},
                          {"classes", d.classes.size()},
                          {"images", d.image_count()},
                          {"alphabets", d.alphabets}};
  };
  nlohmann::json manifest{{"dataset", "omniglot"},
                          {"source", fs::absolute(source).string()},
                          {"resolution", kImageSide},
                          {"augmentation", false},
                          {"train", split_json(train, result.train_cache, result.train_crc)},
                          {"test", split_json(test, result.test_cache, result.test_crc)}};
  write_if_changed(result.manifest, manifest.dump(2) + "\n");
  return result;
}

GlyphDataset binarize_mnist(std::span<const std::uint8_t> gray, std::span<const std::uint8_t> labels, int count,
                            std::uint64_t seed) {
  if (gray.size() != std::size_t(count) * kImagePixels || labels.size() != std::size_t(count))
    throw IngestError("MNIST arrays do not hold " + std::to_string(count) + " images");
  GlyphDataset data;
  data.name = "mnist";
  data.split = Split::test;
  data.alphabets = {"mnist"};
  for (int d = 0; d < 10; ++d) data.classes.push_back(GlyphClass{d, 0, {}});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    if (labels[i] > 9) throw IngestError("MNIST label " + std::to_string(labels[i]) + " out of range");
    BinaryImage img;
    for (int p = 0; p < kImagePixels; ++p) {
      const double prob = gray[std::size_t(i) * kImagePixels + p] / 255.0;
      img.pixels[p] = unit(rng) < prob ? 1 : 0;
    }
    data.classes[labels[i]].images.push_back(img);
  }
  return data;
}

namespace {

std::uint32_t be32(const std::string& b, std::size_t pos) {
  return (std::uint32_t(std::uint8_t(b[pos])) << 24) | (std::uint32_t(std::uint8_t(b[pos + 1])) << 16) |
         (std::uint32_t(std::uint8_t(b[pos + 2])) << 8) | std::uint32_t(std::uint8_t(b[pos + 3]));
}

}  // namespace

IngestResult ingest_mnist_test(const fs::path& source_dir, const fs::path& cache_dir, std::uint64_t seed) {
  const fs::path images_path = source_dir / "t10k-images-idx3-ubyte";
  const fs::path labels_path = source_dir / "t10k-labels-idx1-ubyte";
  const std::string images = slurp(images_path), labels = slurp(labels_path);
  if (images.size() < 16 || be32(images, 0) != 2051) throw IngestError(images_path.string() + ": not an IDX image file");
  if (labels.size() < 8 || be32(labels, 0) != 2049) throw IngestError(labels_path.string() + ": not an IDX label file");
  const auto n = be32(images, 4);
  if (n != std::uint32_t(kMnistTestImages) || be32(labels, 4) != n)
    throw IngestError(images_path.string() + ": " + std::to_string(n) + " images, expected " +
                      std::to_string(kMnistTestImages));
  if (be32(images, 8) != 28 || be32(images, 12) != 28) throw IngestError(images_path.string() + ": images are not 28x28");
  if (images.size() != 16 + std::size_t(n) * kImagePixels || labels.size() != 8 + std::size_t(n))
    throw IngestError(images_path.string() + ": size does not match the header");
  auto as_bytes = [](const std::string& s, std::size_t off) {
    return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()) + off, s.size() - off);
  };
  GlyphDataset data = binarize_mnist(as_bytes(images, 16), as_bytes(labels, 8), int(n), seed);
  const std::string bytes = serialize(data);
  IngestResult result;
  result.test_cache = cache_dir / "mnist_test.gmnc";
  result.manifest = cache_dir / "mnist_manifest.json";
  result.test_crc = crc_of(bytes);
  result.unchanged = !write_if_changed(result.test_cache, bytes);
  nlohmann::json manifest{{"dataset", "mnist"},
                          {"source", fs::absolute(source_dir).string()},
                          {"binarization", "single Bernoulli draw per pixel, p = intensity / 255"},
                          {"seed", seed},
                          {"test", {{"file", result.test_cache.filename().string()},
                                    {"crc32", result.test_crc},
                                    {"classes", data.classes.size()},
                                    {"images", data.image_count()}}}};
  write_if_changed(result.manifest, manifest.dump(2) + "\n");
  return result;
}

Episode sample_episode(const GlyphDataset& data, int length, int classes, std::mt19937_64& rng) {
  if (length < 1 || classes < 1) throw ContractError("sample_episode needs length >= 1 and classes >= 1");
  std::vector<int> usable;
  for (std::size_t c = 0; c < data.classes.size(); ++c)
    if (!data.classes[c].images.empty()) usable.push_back(int(c));
  if (int(usable.size()) < classes)
    throw ContractError("sample_episode: " + std::to_string(usable.size()) + " usable classes, " +
                        std::to_string(classes) + " requested");
  // Partial Fisher-Yates for the class draw.
  for (int i = 0; i < classes; ++i) {
    std::uniform_int_distribution<int> pick(i, int(usable.size()) - 1);
    std::swap(usable[i], usable[pick(rng)]);
  }
  usable.resize(classes);

  // Unused image indices per chosen class; empty pools fall back to
  // drawing with replacement.
  std::vector<std::vector<int>> unused(classes);
  for (int k = 0; k < classes; ++k) {
    unused[k].resize(data.classes[usable[k]].images.size());
    std::iota(unused[k].begin(), unused[k].end(), 0);
  }
  Episode ep;
  std::uniform_int_distribution<int> slot_class(0, classes - 1);
  for (int t = 0; t < length; ++t) {
    const int k = slot_class(rng);
    const GlyphClass& gc = data.classes[usable[k]];
    auto& pool = unused[k];
    int index;
    if (!pool.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t j = pick(rng);
      index = pool[j];
      pool[j] = pool.back();
      pool.pop_back();
    } else {
      std::uniform_int_distribution<int> pick(0, int(gc.images.size()) - 1);
      index = pick(rng);
    }
    ep.items.push_back({gc.images[index], gc.class_id});
  }
  return ep;
}

std::mt19937_64 derive_rng(std::uint64_t base_seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(base_seed), std::uint32_t(base_seed >> 32), std::uint32_t(stream),
                    std::uint32_t(stream >> 32)};
  return std::mt19937_64(seq);
}

fs::path default_cache_root() {
  if (const char* env = std::getenv("GMN_DATA_ROOT"); env && *env) return fs::path(env);
  return fs::path("data") / "cache";
}

}  // namespace gmn
