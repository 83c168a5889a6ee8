#include "lanistr/parameter.hpp"

namespace lanistr {

ParameterStore::ParameterStore(std::uint64_t seed, bool allocate) : rng_(seed), allocate_(allocate) {}

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init) {
  if (index_.count(name)) throw Error("ParameterStore: duplicate parameter name '" + name + "'");
  Tensor t;
  if (allocate_) {
    std::vector<double> values(numel(shape));
    switch (init.kind) {
      case Init::Kind::kZeros:
        break;
      case Init::Kind::kOnes:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case Init::Kind::kNormal: {
        std::normal_distribution<double> dist(0.0, init.scale);
        for (double& v : values) v = dist(rng_);
        break;
      }
      case Init::Kind::kUniform: {
        std::uniform_real_distribution<double> dist(-init.scale, init.scale);
        for (double& v : values) v = dist(rng_);
        break;
      }
    }
    t = Tensor(shape, std::move(values), true);
  } else {
    t = Tensor::scalar(0.0);
  }
  index_.emplace(name, params_.size());
  params_.push_back({name, t, false});
  shapes_.push_back(std::move(shape));
  return t;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) {
      p.frozen = frozen;
      if (allocate_) {
        p.tensor.set_requires_grad(!frozen);
        p.tensor.zero_grad();
      }
    }
  }
}

std::size_t ParameterStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name.rfind(prefix, 0) == 0) n += numel(shapes_[i]);
  }
  return n;
}

std::size_t ParameterStore::trainable_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].frozen && params_[i].name.rfind(prefix, 0) == 0) n += numel(shapes_[i]);
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace lanistr
