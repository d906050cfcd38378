#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "telto/autodiff.hpp"
#include "telto/tensor.hpp"

namespace telto {

/// Ordered, named parameter tensors. Order is the binding order on tapes and
/// the serialization order, so it must stay stable for a given config.
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    for (const std::string& existing : names)
      if (existing == name) throw std::logic_error("duplicate parameter name: " + name);
    names.push_back(name);
    values.push_back(std::move(init));
    return values.back();
  }

  std::size_t size() const { return values.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw std::out_of_range("no parameter named " + name);
  }

  const Tensor<T>& at(const std::string& name) const { return values[index_of(name)]; }
  Tensor<T>& at(const std::string& name) { return values[index_of(name)]; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const Tensor<T>& v : values) n += v.data.size();
    return n;
  }

  std::vector<ad::NodeId> bind_all(ad::Tape<T>& tape, bool requires_grad) const {
    std::vector<ad::NodeId> ids;
    ids.reserve(values.size());
    for (const Tensor<T>& v : values) ids.push_back(tape.leaf(v, requires_grad));
    return ids;
  }
};

}  // namespace telto
