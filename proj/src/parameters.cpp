#include "smart/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "smart/errors.hpp"

namespace smart {

Tensor ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), value});
  return value;
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

Tensor ParameterSet::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return params_[it->second].value;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    auto g = p.value.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw ShapeError("parameter sets differ in size");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw ShapeError("parameter mismatch: " + dst.name + shape_to_string(dst.value.shape()) +
                       " vs " + src.name + shape_to_string(src.value.shape()));
    }
    std::ranges::copy(src.value.data(), dst.value.mutable_data().begin());
  }
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor({fan_in, fan_out}, std::move(v));
}

}  // namespace smart
