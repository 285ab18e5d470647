#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hg/tensor.hpp"

namespace hg {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of named trainable tensors. Insertion order is the
// iteration (and checkpoint) order; names are unique.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_zeros(const std::string& name, Shape shape);
  Tensor& add_constant(const std::string& name, Shape shape, double value);
  Tensor& add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor& add_fan_in(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace hg
