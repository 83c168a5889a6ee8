#pragma once

#include <random>
#include <string>
#include <vector>

#include "lanistr/parameter.hpp"
#include "lanistr/tensor.hpp"

namespace lanistr {

/// Per-forward switches: dropout is active only in training mode.
struct ForwardContext {
  bool train = false;
  std::mt19937_64* rng = nullptr;

  Tensor dropout(const Tensor& x, double rate) const;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  Tensor operator()(const Tensor& x) const;

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  Tensor weight_;
  Tensor bias_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_, 1e-5); }

 private:
  Tensor gamma_;
  Tensor beta_;
};

struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  double dropout = 0.1;

  void validate(const std::string& what) const;
};

/// Pre-norm encoder block: x + Attn(LN(x)), then x + FFN(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, const TransformerConfig& cfg);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

 private:
  LayerNorm ln_attn_, ln_ff_;
  Linear wq_, wk_, wv_, wo_;
  Linear ff_in_, ff_out_;
  std::size_t n_heads_ = 1;
  double dropout_ = 0.0;
};

/// Stack of pre-norm blocks followed by a final layer norm. Input [B, N, D].
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParameterStore& store, const std::string& name, const TransformerConfig& cfg);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

 private:
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

}  // namespace lanistr
