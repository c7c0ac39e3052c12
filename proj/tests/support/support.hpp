#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gmn/ops.hpp"

namespace gmn::testing {

using ad::Shape;
using ad::Tape;
using ad::Var;

inline std::vector<double> random_vector(std::mt19937_64& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct Input {
  std::vector<double> values;
  Shape shape;
};

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Worst relative error between reverse-mode gradients of <proj, f(inputs)>
// and central differences.
inline double gradient_error(std::vector<Input> inputs, const Builder& f, std::uint64_t seed = 7,
                             double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  std::vector<double> proj;
  auto loss = [&](Tape<double>& tape, const std::vector<Var>& vars) {
    Var out = f(tape, vars);
    if (proj.empty()) proj = random_vector(rng, tape.size(out));
    Var w = tape.constant(proj, tape.shape(out));
    return ad::sum(tape, ad::mul(tape, out, w));
  };
  Tape<double> tape;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(tape.parameter(int(i), std::span<const double>(inputs[i].values), inputs[i].shape));
  tape.backward(loss(tape, vars));
  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) analytic[i].assign(inputs[i].values.size(), 0.0);
  tape.for_each_parameter_grad([&](int p, std::span<const double> g) { analytic[p].assign(g.begin(), g.end()); });

  auto evaluate = [&]() {
    Tape<double> t(false);
    std::vector<Var> vs;
    for (std::size_t i = 0; i < inputs.size(); ++i) vs.push_back(t.constant(inputs[i].values, inputs[i].shape));
    return t.scalar(loss(t, vs));
  };
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t k = 0; k < inputs[i].values.size(); ++k) {
      const double keep = inputs[i].values[k];
      inputs[i].values[k] = keep + eps;
      const double up = evaluate();
      inputs[i].values[k] = keep - eps;
      const double down = evaluate();
      inputs[i].values[k] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[i][k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, err);
    }
  return worst;
}

}  // namespace gmn::testing
