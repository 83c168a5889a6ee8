#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace lanistr::testing {

/// One differentiable operation; `instance` draws a random problem and returns
/// its gradient error against central differences.
struct GradientCase {
  std::string name;
  std::function<double(std::mt19937_64&)> instance;
};

const std::vector<GradientCase>& gradient_cases();

/// Worst error over `instances` draws.
double run_gradient_case(const GradientCase& c, std::size_t instances, std::uint64_t seed);

}  // namespace lanistr::testing
