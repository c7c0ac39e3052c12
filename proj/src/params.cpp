#include "gmn/params.hpp"

#include <algorithm>

namespace gmn {

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::heads: return "heads";
    case ParamGroup::controllers: return "controllers";
    case ParamGroup::pseudo: return "pseudo";
    case ParamGroup::prior_heads: return "prior_heads";
    case ParamGroup::recognition_heads: return "recognition_heads";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& s) {
  for (int g = 0; g < kParamGroupCount; ++g)
    if (s == to_string(ParamGroup(g))) return ParamGroup(g);
  throw ContractError("unknown parameter group '" + s + "'");
}

template <typename T>
ParamId ParameterStore<T>::add(const std::string& name, ad::Shape shape, ParamGroup group) {
  if (by_name_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  for (int d : shape)
    if (d < 1) throw ShapeError("parameter '" + name + "' has shape " + ad::to_string(shape));
  Tensor<T> t;
  t.data.assign(ad::shape_size(shape), T(0));
  t.shape = std::move(shape);
  tensors_.push_back(std::move(t));
  names_.push_back(name);
  groups_.push_back(group);
  ParamId id = ParamId(tensors_.size()) - 1;
  by_name_[name] = id;
  return id;
}

template <typename T>
ParamId ParameterStore<T>::id(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

template <typename T>
bool ParameterStore<T>::same_layout(const ParameterStore& other) const {
  return names_ == other.names_ && groups_ == other.groups_ &&
         std::equal(tensors_.begin(), tensors_.end(), other.tensors_.begin(), other.tensors_.end(),
                    [](const Tensor<T>& a, const Tensor<T>& b) { return a.shape == b.shape; });
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace gmn
