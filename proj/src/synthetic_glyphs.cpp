// Procedural handwriting-like glyphs laid out like the Omniglot tree.
// Alphabets own a small set of stroke shapes and a pen width; characters
// compose two to four of those strokes at random placements; each of the
// 20 drawings perturbs the character with a per-drawer affine jitter and
// control-point noise.

#include <array>
#include <cmath>
#include <cstdio>

#include "gmn/data.hpp"
#include "gmn/errors.hpp"

namespace gmn {

namespace {

namespace fs = std::filesystem;

constexpr int kSide = 105;
constexpr int kBackgroundClasses = 964;
constexpr int kEvaluationClasses = kOmniglotClasses - kBackgroundClasses;

struct Point {
  double x, y;
};
using Stroke = std::array<Point, 4>;  // cubic Bezier control points in [0, 1]^2

struct Alphabet {
  std::vector<Stroke> shapes;
  double pen = 3.0;  // pen radius in raw pixels
};

struct Character {
  std::vector<Stroke> strokes;
};

Point bezier(const Stroke& s, double t) {
  const double u = 1 - t;
  const double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, d = t * t * t;
  return {a * s[0].x + b * s[1].x + c * s[2].x + d * s[3].x, a * s[0].y + b * s[1].y + c * s[2].y + d * s[3].y};
}

Alphabet make_alphabet(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> shape_count(4, 8);
  Alphabet a;
  a.pen = 3.4 + 1.6 * unit(rng);
  const double curl = 0.2 + 0.6 * unit(rng);
  const int n = shape_count(rng);
  for (int i = 0; i < n; ++i) {
    Stroke s;
    s[0] = {unit(rng), unit(rng)};
    s[3] = {unit(rng), unit(rng)};
    for (int k = 1; k < 3; ++k) {
      const double t = k / 3.0;
      s[k] = {s[0].x + t * (s[3].x - s[0].x) + curl * (unit(rng) - 0.5),
              s[0].y + t * (s[3].y - s[0].y) + curl * (unit(rng) - 0.5)};
    }
    a.shapes.push_back(s);
  }
  return a;
}

// Places stroke shapes inside the unit box at a random scale and offset.
Character make_character(const Alphabet& a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> stroke_count(2, 4);
  std::uniform_int_distribution<std::size_t> pick(0, a.shapes.size() - 1);
  Character c;
  const int n = stroke_count(rng);
  for (int i = 0; i < n; ++i) {
    const Stroke& shape = a.shapes[pick(rng)];
    const double scale = 0.55 + 0.45 * unit(rng);
    const double ox = (1 - scale) * unit(rng), oy = (1 - scale) * unit(rng);
    const bool flip = unit(rng) < 0.5;
    Stroke s;
    for (int k = 0; k < 4; ++k) {
      const Point p = shape[k];
      s[k] = {ox + scale * (flip ? 1 - p.x : p.x), oy + scale * p.y};
    }
    c.strokes.push_back(s);
  }
  return c;
}

GrayImage draw(const Character& c, double pen, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const double angle = 0.08 * noise(rng);
  const double scale = 1.0 + 0.05 * noise(rng);
  const double shear = 0.05 * noise(rng);
  const double dx = 0.03 * noise(rng), dy = 0.03 * noise(rng);
  const double radius = std::max(2.5, pen * (1.0 + 0.12 * noise(rng)));
  const double ca = std::cos(angle), sa = std::sin(angle);
  // Glyph box occupies the central 70% of the canvas.
  auto to_canvas = [&](Point p) {
    const double x = p.x - 0.5 + shear * (p.y - 0.5), y = p.y - 0.5;
    const double rx = scale * (ca * x - sa * y) + dx, ry = scale * (sa * x + ca * y) + dy;
    return Point{kSide * (0.5 + 0.7 * rx), kSide * (0.5 + 0.7 * ry)};
  };

  GrayImage img;
  img.width = img.height = kSide;
  img.pixels.assign(kSide * kSide, 255);
  for (const Stroke& base : c.strokes) {
    Stroke s = base;
    for (auto& p : s) p = {p.x + 0.025 * noise(rng), p.y + 0.025 * noise(rng)};
    constexpr int kSamples = 80;
    for (int i = 0; i <= kSamples; ++i) {
      const Point p = to_canvas(bezier(s, double(i) / kSamples));
      const int x0 = std::max(0, int(p.x - radius)), x1 = std::min(kSide - 1, int(p.x + radius) + 1);
      const int y0 = std::max(0, int(p.y - radius)), y1 = std::min(kSide - 1, int(p.y + radius) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if ((x + 0.5 - p.x) * (x + 0.5 - p.x) + (y + 0.5 - p.y) * (y + 0.5 - p.y) <= radius * radius)
            img.pixels[y * kSide + x] = 0;
    }
  }
  return img;
}

// Splits `total` characters over `alphabets` with sizes varying around the mean.
std::vector<int> alphabet_sizes(int total, int alphabets, std::mt19937_64& rng) {
  std::vector<int> sizes(alphabets, total / alphabets);
  for (int i = 0; i < total % alphabets; ++i) ++sizes[i];
  std::uniform_int_distribution<int> pick(0, alphabets - 1);
  for (int i = 0; i < 4 * alphabets; ++i) {
    const int from = pick(rng), to = pick(rng);
    if (sizes[from] > 14) {
      --sizes[from];
      ++sizes[to];
    }
  }
  return sizes;
}

void write_split(const fs::path& dir, const char* prefix, int classes, int alphabets, int& class_index,
                 std::mt19937_64& rng) {
  const auto sizes = alphabet_sizes(classes, alphabets, rng);
  for (int a = 0; a < alphabets; ++a) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%02d", prefix, a + 1);
    const Alphabet alphabet = make_alphabet(rng);
    for (int k = 0; k < sizes[a]; ++k) {
      char character[32];
      std::snprintf(character, sizeof character, "character%02d", k + 1);
      const fs::path cdir = dir / name / character;
      fs::create_directories(cdir);
      const Character c = make_character(alphabet, rng);
      ++class_index;
      for (int d = 0; d < kOmniglotImagesPerClass; ++d) {
        char file[32];
        std::snprintf(file, sizeof file, "%04d_%02d.png", class_index, d + 1);
        write_png_gray(cdir / file, draw(c, alphabet.pen, rng));
      }
    }
  }
}

}  // namespace

void write_synthetic_omniglot(const fs::path& root, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int class_index = 0;
  write_split(root / "images_background", "Background_Alphabet", kBackgroundClasses, kOmniglotTrainAlphabets,
              class_index, rng);
  write_split(root / "images_evaluation", "Evaluation_Alphabet", kEvaluationClasses, kOmniglotTestAlphabets,
              class_index, rng);
}

}  // namespace gmn
