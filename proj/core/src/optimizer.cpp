#include "lanistr/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace lanistr {

void AdamWConfig::validate() const {
  if (!(weight_decay >= 0.0)) throw Error("AdamW: weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("AdamW: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("AdamW: eps must be positive");
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(ParameterStore& store, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("AdamW: learning rate must be finite and >= 0");
  auto& params = store.params();
  if (slots_.size() < params.size()) slots_.resize(params.size());

  for (const auto& p : params) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw Error("AdamW: non-finite gradient in parameter '" + p.name + "'");
    }
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen || !p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    auto w = p.tensor.mutable_data();
    if (!slots_[i]) slots_[i] = Slot{std::vector<double>(w.size(), 0.0), std::vector<double>(w.size(), 0.0)};
    auto& s = *slots_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      s.m[j] = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g[j];
      s.v[j] = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = s.m[j] / bc1;
      const double v_hat = s.v[j] / bc2;
      w[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
}

const std::vector<double>* AdamW::first_moment(std::size_t index) const {
  return index < slots_.size() && slots_[index] ? &slots_[index]->m : nullptr;
}

const std::vector<double>* AdamW::second_moment(std::size_t index) const {
  return index < slots_.size() && slots_[index] ? &slots_[index]->v : nullptr;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) throw Error("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw Error("cosine_lr: step beyond total_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace lanistr
