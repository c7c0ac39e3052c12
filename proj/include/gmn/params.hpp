#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gmn/tape.hpp"

namespace gmn {

// Coarse grouping used for gradient-flow diagnostics.
enum class ParamGroup : std::uint8_t {
  encoder,
  decoder,
  heads,
  controllers,
  pseudo,
  prior_heads,
  recognition_heads,
};

const char* to_string(ParamGroup g);
ParamGroup parse_param_group(const std::string& s);
inline constexpr int kParamGroupCount = 7;

using ParamId = int;

template <typename T>
struct Tensor {
  ad::Shape shape;
  std::vector<T> data;
};

// Every trainable tensor of the model, addressed by name or id. Ids are
// dense and stable for a given configuration, so gradient buffers and
// optimizer moments can be plain vectors indexed the same way.
template <typename T>
class ParameterStore {
 public:
  ParamId add(const std::string& name, ad::Shape shape, ParamGroup group);

  ParamId id(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  int count() const { return int(tensors_.size()); }
  std::size_t total_size() const;

  const std::string& name(ParamId id) const { return names_.at(id); }
  ParamGroup group(ParamId id) const { return groups_.at(id); }
  const ad::Shape& shape(ParamId id) const { return tensors_.at(id).shape; }
  std::span<T> data(ParamId id) { return tensors_.at(id).data; }
  std::span<const T> data(ParamId id) const { return tensors_.at(id).data; }

  // Same names, shapes and groups.
  bool same_layout(const ParameterStore& other) const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (ParamId p = 0; p < count(); ++p) {
      ParamId q = out.add(names_[p], tensors_[p].shape, groups_[p]);
      auto src = data(p);
      auto dst = out.data(q);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = U(src[i]);
    }
    return out;
  }

 private:
  std::vector<Tensor<T>> tensors_;
  std::vector<std::string> names_;
  std::vector<ParamGroup> groups_;
  std::map<std::string, ParamId> by_name_;
};

// Binds a stored parameter as a tape leaf.
template <typename T>
ad::Var bind(ad::Tape<T>& tape, const ParameterStore<T>& store, ParamId id) {
  return tape.parameter(id, store.data(id), store.shape(id));
}

// Gradient buffers laid out like a ParameterStore.
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> values;

  static Gradients zeros_like(const ParameterStore<T>& store) {
    Gradients g;
    g.values.resize(store.count());
    for (ParamId p = 0; p < store.count(); ++p) g.values[p].assign(store.data(p).size(), T(0));
    return g;
  }

  void add_from(const ad::Tape<T>& tape, T factor = T(1)) {
    tape.for_each_parameter_grad([&](int p, std::span<const T> g) {
      auto& dst = values.at(p);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
    });
  }

  void add(const Gradients& other, T factor = T(1)) {
    for (std::size_t p = 0; p < values.size(); ++p)
      for (std::size_t i = 0; i < values[p].size(); ++i) values[p][i] += factor * other.values[p][i];
  }

  double squared_norm(ParamId p) const {
    double acc = 0;
    for (T v : values.at(p)) acc += double(v) * double(v);
    return acc;
  }
};

}  // namespace gmn
