#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lanistr/parameter.hpp"

namespace lanistr {

struct AdamWConfig {
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam with weight decay applied directly to the weights (not through the
/// moments). Frozen parameters and parameters without a gradient this step are
/// skipped and never get moment buffers.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {});

  /// One update at learning rate `lr`. Throws naming the first parameter
  /// whose gradient holds a non-finite value; nothing is updated in that case.
  void step(ParameterStore& store, double lr);

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  /// Moment buffers of parameter `index`, if it has been updated.
  const std::vector<double>* first_moment(std::size_t index) const;
  const std::vector<double>* second_moment(std::size_t index) const;

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::optional<Slot>> slots_;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

}  // namespace lanistr
