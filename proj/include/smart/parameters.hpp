#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "smart/random.hpp"
#include "smart/tensor.hpp"

namespace smart {

struct Parameter {
  std::string name;  // dotted path, e.g. "enc.0.attn.wq"
  Tensor value;      // requires_grad, grad buffer has the same shape
};

/// Ordered, uniquely named parameter collection. Tensors are handles, so
/// the Tensor returned by add() aliases the stored parameter.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor get(std::string_view name) const;

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Copies values (not handles) from another set with identical names/shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// fan_in×fan_out matrix from U(-√(6/(fan_in+fan_out)), +√(...)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace smart
