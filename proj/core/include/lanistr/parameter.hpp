#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lanistr/tensor.hpp"

namespace lanistr {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

struct Init {
  enum class Kind { kZeros, kOnes, kNormal, kUniform };
  Kind kind = Kind::kZeros;
  double scale = 0.0;

  static Init zeros() { return {Kind::kZeros, 0.0}; }
  static Init ones() { return {Kind::kOnes, 0.0}; }
  static Init normal(double stddev) { return {Kind::kNormal, stddev}; }
  static Init uniform(double bound) { return {Kind::kUniform, bound}; }
};

/// Owns every trainable tensor of a model under a unique dotted name.
///
/// A store built with `allocate = false` only records names and shapes; the
/// tensors it hands out are placeholders. It is used to count parameters of
/// presets too large to materialize.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, bool allocate = true);

  Tensor create(const std::string& name, Shape shape, Init init);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const std::vector<Shape>& shapes() const { return shapes_; }

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  /// Marks every parameter whose name starts with `prefix`. Frozen tensors stop
  /// requiring gradients so no graph is recorded through them.
  void set_frozen(const std::string& prefix, bool frozen);

  std::size_t count(const std::string& prefix = "") const;
  std::size_t trainable_count(const std::string& prefix = "") const;

  void zero_grad();
  bool allocated() const { return allocate_; }

 private:
  std::mt19937_64 rng_;
  bool allocate_;
  std::vector<Parameter> params_;
  std::vector<Shape> shapes_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lanistr
