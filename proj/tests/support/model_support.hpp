#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gmn/data.hpp"
#include "gmn/neural_core.hpp"
#include "support.hpp"

namespace gmn::testing {

using ModelLoss = std::function<ad::Var(ad::Tape<double>&, const GenerativeMatchingNetwork<double>&)>;

struct GradientReport {
  double worst = 0;
  int checked = 0;
  std::string worst_param;
};

// Central differences against reverse mode for every `stride`-th entry of
// every parameter tensor.
inline GradientReport model_gradient_error(GenerativeMatchingNetwork<double>& model, const ModelLoss& loss,
                                           int stride = 1, double eps = 1e-5) {
  auto& store = model.mutable_parameters();
  ad::Tape<double> tape;
  tape.backward(loss(tape, model));
  auto grads = Gradients<double>::zeros_like(store);
  grads.add_from(tape);
  auto value = [&] {
    ad::Tape<double> t(false);
    return t.scalar(loss(t, model));
  };
  GradientReport report;
  for (ParamId p = 0; p < store.count(); ++p) {
    auto data = store.data(p);
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double keep = data[i];
      data[i] = keep + eps;
      const double up = value();
      data[i] = keep - eps;
      const double down = value();
      data[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double a = grads.values[p][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      ++report.checked;
      if (err > report.worst) {
        report.worst = err;
        report.worst_param = store.name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

inline BinaryImage random_image(std::mt19937_64& rng, double ink = 0.2) {
  std::bernoulli_distribution b(ink);
  BinaryImage img;
  for (auto& p : img.pixels) p = b(rng) ? 1 : 0;
  return img;
}

inline std::vector<BinaryImage> random_images(std::mt19937_64& rng, int n, double ink = 0.2) {
  std::vector<BinaryImage> out;
  for (int i = 0; i < n; ++i) out.push_back(random_image(rng, ink));
  return out;
}

// Small dataset of random-but-structured classes: each class is a random
// rectangle outline with per-image jitter.
inline GlyphDataset toy_dataset(int classes, int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GlyphDataset d;
  d.name = "toy";
  d.alphabets = {"toy"};
  std::uniform_int_distribution<int> corner(2, 12), extent(8, 14), jitter(-1, 1);
  for (int c = 0; c < classes; ++c) {
    GlyphClass gc;
    gc.class_id = c;
    const int r0 = corner(rng), c0 = corner(rng), h = extent(rng), w = extent(rng);
    for (int i = 0; i < per_class; ++i) {
      BinaryImage img;
      const int dr = jitter(rng), dc = jitter(rng);
      for (int r = r0; r < std::min(28, r0 + h); ++r)
        for (int q = c0; q < std::min(28, c0 + w); ++q)
          if (r == r0 || r == r0 + h - 1 || q == c0 || q == c0 + w - 1) {
            const int rr = std::clamp(r + dr, 0, 27), qq = std::clamp(q + dc, 0, 27);
            img.at(rr, qq) = 1;
          }
      gc.images.push_back(img);
    }
    d.classes.push_back(std::move(gc));
  }
  return d;
}

}  // namespace gmn::testing
