#pragma once

// A small reverse-mode autodiff tape. Nodes are appended in evaluation
// order, so the node list is already topologically sorted; backward()
// walks it in reverse. Parameters are leaves that view ParameterStore
// memory directly and are bound once per tape.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmn/errors.hpp"

namespace gmn::ad {

using Shape = std::vector<int>;

inline int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  // A non-recording tape evaluates forward only: no closures, no gradients.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(std::vector<T> values, Shape shape) {
    check_size(values.size(), shape, "constant");
    Node n;
    n.owned = std::move(values);
    n.shape = std::move(shape);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  // Leaf that views external parameter memory; repeated binds of the same
  // index return the same node so gradients accumulate in one place.
  Var parameter(int param_index, std::span<const T> data, const Shape& shape) {
    check_size(data.size(), shape, "parameter");
    if (param_index >= int(param_nodes_.size())) param_nodes_.resize(param_index + 1, -1);
    if (param_nodes_[param_index] >= 0) return Var{param_nodes_[param_index]};
    Node n;
    n.external = data.data();
    n.external_size = data.size();
    n.shape = shape;
    n.needs_grad = record_;
    n.param_index = param_index;
    nodes_.push_back(std::move(n));
    param_nodes_[param_index] = int(nodes_.size()) - 1;
    return Var{param_nodes_[param_index]};
  }

  Var push(std::vector<T> value, Shape shape, bool needs_grad, Backward backward) {
    check_size(value.size(), shape, "op");
    Node n;
    n.owned = std::move(value);
    n.shape = std::move(shape);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  std::span<const T> value(Var v) const {
    const Node& n = node(v);
    if (n.external) return {n.external, n.external_size};
    return {n.owned.data(), n.owned.size()};
  }
  T scalar(Var v) const {
    auto s = value(v);
    if (s.size() != 1) throw ShapeError("scalar() on tensor of shape " + to_string(shape(v)));
    return s[0];
  }
  const Shape& shape(Var v) const { return node(v).shape; }
  int size(Var v) const { return int(value(v).size()); }
  bool needs_grad(Var v) const { return v.valid() && node(v).needs_grad; }

  std::span<T> grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.external ? n.external_size : n.owned.size(), T(0));
    return {n.grad.data(), n.grad.size()};
  }

  void backward(Var root) {
    if (!record_) throw ContractError("backward() on a non-recording tape");
    if (size(root) != 1) throw ShapeError("backward() root must be a scalar");
    grad(root)[0] += T(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // fn(param_index, gradient span) for every parameter that received a gradient.
  template <typename Fn>
  void for_each_parameter_grad(Fn&& fn) const {
    for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
      int id = param_nodes_[p];
      if (id < 0 || nodes_[id].grad.empty()) continue;
      fn(int(p), std::span<const T>(nodes_[id].grad));
    }
  }

  struct Mark {
    std::size_t nodes = 0;
  };
  Mark mark() const { return Mark{nodes_.size()}; }
  // Drops every node created after the mark.
  void rewind(Mark m) {
    nodes_.resize(m.nodes);
    for (int& id : param_nodes_)
      if (id >= int(m.nodes)) id = -1;
  }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<T> owned;
    const T* external = nullptr;
    std::size_t external_size = 0;
    Shape shape;
    std::vector<T> grad;
    bool needs_grad = false;
    int param_index = -1;
    Backward backward;
  };

  static void check_size(std::size_t n, const Shape& s, const char* what) {
    if (int(n) != shape_size(s))
      throw ShapeError(std::string(what) + ": " + std::to_string(n) + " values for shape " +
                       to_string(s));
  }

  Node& node(Var v) {
    if (v.id < 0 || v.id >= int(nodes_.size())) throw ContractError("invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= int(nodes_.size())) throw ContractError("invalid tape variable");
    return nodes_[v.id];
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

}  // namespace gmn::ad
