#include "lanistr/layers.hpp"

#include <cmath>

namespace lanistr {

Tensor ForwardContext::dropout(const Tensor& x, double rate) const {
  if (!train || rate <= 0.0 || rng == nullptr) return x;
  return lanistr::dropout(x, rate, *rng);
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias)
    : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = store.create(name + ".weight", {in, out}, Init::uniform(bound));
  if (bias) bias_ = store.create(name + ".bias", {out}, Init::zeros());
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width)
    : gamma_(store.create(name + ".gamma", {width}, Init::ones())),
      beta_(store.create(name + ".beta", {width}, Init::zeros())) {}

void TransformerConfig::validate(const std::string& what) const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw Error(what + ": d_model " + std::to_string(d_model) + " must be a positive multiple of n_heads " +
                std::to_string(n_heads));
  }
  if (d_ff == 0) throw Error(what + ": d_ff must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(what + ": dropout must be in [0, 1)");
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, const TransformerConfig& cfg)
    : ln_attn_(store, name + ".ln_attn", cfg.d_model),
      ln_ff_(store, name + ".ln_ff", cfg.d_model),
      wq_(store, name + ".attn.wq", cfg.d_model, cfg.d_model),
      wk_(store, name + ".attn.wk", cfg.d_model, cfg.d_model),
      wv_(store, name + ".attn.wv", cfg.d_model, cfg.d_model),
      wo_(store, name + ".attn.wo", cfg.d_model, cfg.d_model),
      ff_in_(store, name + ".ff.in", cfg.d_model, cfg.d_ff),
      ff_out_(store, name + ".ff.out", cfg.d_ff, cfg.d_model),
      n_heads_(cfg.n_heads),
      dropout_(cfg.dropout) {}

Tensor TransformerBlock::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = ln_attn_(x);
  Tensor attn = multi_head_attention(wq_(h), wk_(h), wv_(h), n_heads_);
  Tensor y = add(x, ctx.dropout(wo_(attn), dropout_));
  Tensor ff = ff_out_(gelu(ff_in_(ln_ff_(y))));
  return add(y, ctx.dropout(ff, dropout_));
}

TransformerStack::TransformerStack(ParameterStore& store, const std::string& name, const TransformerConfig& cfg) {
  cfg.validate(name);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    blocks_.emplace_back(store, name + ".layer" + std::to_string(i), cfg);
  }
  final_norm_ = LayerNorm(store, name + ".final_norm", cfg.d_model);
}

Tensor TransformerStack::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (const auto& block : blocks_) h = block(h, ctx);
  return final_norm_(h);
}

}  // namespace lanistr
