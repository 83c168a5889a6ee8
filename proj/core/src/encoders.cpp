#include "lanistr/encoders.hpp"

#include <cmath>
#include <numeric>

namespace lanistr {

namespace {

constexpr double kEmbeddingStd = 0.02;

// Prepends a learned classification vector to [n, N, d] token states.
Tensor prepend_cls(const Tensor& cls, const Tensor& tokens) {
  const std::size_t n = tokens.dim(0), d = tokens.dim(2);
  std::vector<std::size_t> zeros(n, 0);
  Tensor cls_rows = reshape(take_rows(reshape(cls, {1, d}), zeros), {n, 1, d});
  return concat({cls_rows, tokens}, 1);
}

Tensor leading_positions(const Tensor& table, std::size_t count) { return slice(table, 0, 0, count); }

}  // namespace

TextEncoder::TextEncoder(ParameterStore& store, const std::string& name, const TextEncoderConfig& cfg) : cfg_(cfg) {
  cfg.transformer.validate(name);
  const std::size_t d = cfg.transformer.d_model;
  token_embedding_ = store.create(name + ".token_embedding", {cfg.vocab_size, d}, Init::normal(kEmbeddingStd));
  position_embedding_ =
      store.create(name + ".position_embedding", {cfg.max_length + 1, d}, Init::normal(kEmbeddingStd));
  cls_ = store.create(name + ".cls", {d}, Init::normal(kEmbeddingStd));
  stack_ = TransformerStack(store, name + ".stack", cfg.transformer);
}

EncoderOutput TextEncoder::operator()(const TextBatch& batch, const ForwardContext& ctx) const {
  if (batch.length > cfg_.max_length) {
    throw Error("text encoder: sequence length " + std::to_string(batch.length) + " exceeds maximum " +
                std::to_string(cfg_.max_length));
  }
  if (batch.count == 0 || batch.length == 0) throw Error("text encoder: empty batch");
  for (int id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw Error("text encoder: token id " + std::to_string(id) + " outside vocabulary of size " +
                  std::to_string(cfg_.vocab_size));
    }
  }
  Tensor tokens = embedding(token_embedding_, batch.ids, {batch.count, batch.length});
  Tensor x = add(prepend_cls(cls_, tokens), leading_positions(position_embedding_, batch.length + 1));
  return {Modality::kText, stack_(ctx.dropout(x, cfg_.transformer.dropout), ctx)};
}

std::vector<double> patchify(std::span<const double> pixels, std::size_t count, std::size_t image_size,
                             std::size_t channels, std::size_t patch_size) {
  const std::size_t per_row = image_size / patch_size;
  const std::size_t n_patches = per_row * per_row;
  const std::size_t patch_dim = patch_size * patch_size * channels;
  const std::size_t image_len = image_size * image_size * channels;
  std::vector<double> out(count * n_patches * patch_dim);
  for (std::size_t s = 0; s < count; ++s) {
    const double* img = pixels.data() + s * image_len;
    for (std::size_t p = 0; p < n_patches; ++p) {
      const std::size_t r0 = (p / per_row) * patch_size;
      const std::size_t c0 = (p % per_row) * patch_size;
      double* dst = out.data() + (s * n_patches + p) * patch_dim;
      for (std::size_t r = 0; r < patch_size; ++r) {
        for (std::size_t c = 0; c < patch_size; ++c) {
          for (std::size_t ch = 0; ch < channels; ++ch) {
            *dst++ = img[((r0 + r) * image_size + (c0 + c)) * channels + ch];
          }
        }
      }
    }
  }
  return out;
}

ImageEncoder::ImageEncoder(ParameterStore& store, const std::string& name, const ImageEncoderConfig& cfg) : cfg_(cfg) {
  cfg.transformer.validate(name);
  if (cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0) {
    throw Error(name + ": image size " + std::to_string(cfg.image_size) + " not divisible by patch size " +
                std::to_string(cfg.patch_size));
  }
  const std::size_t d = cfg.transformer.d_model;
  patch_embedding_ = Linear(store, name + ".patch_embedding", cfg.patch_dim(), d);
  mask_embedding_ = store.create(name + ".mask_embedding", {d}, Init::normal(kEmbeddingStd));
  position_embedding_ =
      store.create(name + ".position_embedding", {cfg.patches() + 1, d}, Init::normal(kEmbeddingStd));
  cls_ = store.create(name + ".cls", {d}, Init::normal(kEmbeddingStd));
  stack_ = TransformerStack(store, name + ".stack", cfg.transformer);
}

EncoderOutput ImageEncoder::operator()(const ImageBatch& batch, const ForwardContext& ctx) const {
  const std::size_t n = batch.count, n_patches = cfg_.patches(), d = cfg_.transformer.d_model;
  const std::size_t image_len = cfg_.image_size * cfg_.image_size * cfg_.channels;
  if (n == 0) throw Error("image encoder: empty batch");
  if (batch.pixels.size() != n * image_len) {
    throw Error("image encoder: expected " + std::to_string(n) + " images of " + std::to_string(cfg_.image_size) + "x" +
                std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels));
  }
  Tensor patches(Shape{n, n_patches, cfg_.patch_dim()},
                 patchify(batch.pixels, n, cfg_.image_size, cfg_.channels, cfg_.patch_size));
  Tensor x = patch_embedding_(patches);
  if (!batch.masked_patches.empty()) {
    if (batch.masked_patches.size() != n * n_patches) throw Error("image encoder: patch mask size mismatch");
    std::vector<double> keep(n * n_patches * d), hide(n * n_patches * d);
    for (std::size_t i = 0; i < n * n_patches; ++i) {
      const double m = batch.masked_patches[i] ? 1.0 : 0.0;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(i * d), d, 1.0 - m);
      std::fill_n(hide.begin() + static_cast<std::ptrdiff_t>(i * d), d, m);
    }
    x = add(mul(x, Tensor({n, n_patches, d}, std::move(keep))),
            mul(Tensor({n, n_patches, d}, std::move(hide)), mask_embedding_));
  }
  x = add(prepend_cls(cls_, x), position_embedding_);
  return {Modality::kImage, stack_(ctx.dropout(x, cfg_.transformer.dropout), ctx)};
}

GluBlock::GluBlock(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool residual)
    : fc_(store, name + ".fc", in, 2 * out), residual_(residual) {
  if (residual && in != out) throw Error(name + ": residual GLU block needs equal widths");
}

Tensor GluBlock::operator()(const Tensor& x) const {
  Tensor y = glu(fc_(x));
  return residual_ ? scale(add(x, y), std::sqrt(0.5)) : y;
}

FeatureTransformer::FeatureTransformer(const std::vector<const GluBlock*>& shared, std::vector<GluBlock> own)
    : shared_(shared), own_(std::move(own)) {}

Tensor FeatureTransformer::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const GluBlock* b : shared_) h = (*b)(h);
  for (const GluBlock& b : own_) h = b(h);
  return h;
}

TabularEncoder::TabularEncoder(ParameterStore& store, const std::string& name, const TabularEncoderConfig& cfg)
    : cfg_(cfg) {
  if (cfg.n_features < 1 || cfg.n_decision_steps < 1 || cfg.d_model < 1 || cfg.d_attention < 1) {
    throw Error(name + ": tabular encoder dimensions must be positive");
  }
  const std::size_t inputs = 2 * cfg.n_features;
  const std::size_t width = cfg.d_model + cfg.d_attention;
  shared_blocks_.emplace_back(store, name + ".shared0", inputs, width, false);
  shared_blocks_.emplace_back(store, name + ".shared1", width, width, true);
  const std::vector<const GluBlock*> shared = {&shared_blocks_[0], &shared_blocks_[1]};
  auto own_blocks = [&](const std::string& prefix) {
    std::vector<GluBlock> own;
    own.emplace_back(store, prefix + ".glu0", width, width, true);
    own.emplace_back(store, prefix + ".glu1", width, width, true);
    return own;
  };
  initial_ = FeatureTransformer(shared, own_blocks(name + ".initial"));
  for (std::size_t s = 0; s < cfg.n_decision_steps; ++s) {
    const std::string step = name + ".step" + std::to_string(s);
    step_transformers_.emplace_back(shared, own_blocks(step));
    attentive_.emplace_back(store, step + ".attentive", cfg.d_attention, inputs);
  }
  cls_projection_ = Linear(store, name + ".cls_projection", cfg.d_model, cfg.d_model);
}

TabularEncoderOutput TabularEncoder::forward(const TabularBatch& batch, const ForwardContext&) const {
  const std::size_t n = batch.count, f = cfg_.n_features;
  if (n == 0) throw Error("tabular encoder: empty batch");
  if (batch.values.size() != n * f || batch.visibility.size() != n * f) {
    throw Error("tabular encoder: expected " + std::to_string(f) + " features per row");
  }
  Tensor inputs = concat({Tensor({n, f}, batch.values), Tensor({n, f}, batch.visibility)}, 1);
  const std::size_t d = cfg_.d_model, a = cfg_.d_attention;

  Tensor attended = slice(initial_(inputs), 1, d, a);
  Tensor prior = Tensor::full({n, 2 * f}, 1.0);
  TabularEncoderOutput out;
  std::vector<Tensor> decisions;
  Tensor decision_sum;
  for (std::size_t s = 0; s < cfg_.n_decision_steps; ++s) {
    Tensor mask = sparsemax(mul(prior, attentive_[s](attended)));
    prior = mul(prior, add_scalar(neg(mask), cfg_.gamma));
    Tensor h = step_transformers_[s](mul(mask, inputs));
    Tensor decision = relu(slice(h, 1, 0, d));
    attended = slice(h, 1, d, a);
    decision_sum = decision_sum.defined() ? add(decision_sum, decision) : decision;
    decisions.push_back(reshape(decision, {n, 1, d}));
    out.step_masks.push_back(mask);
  }
  Tensor cls = reshape(cls_projection_(decision_sum), {n, 1, d});
  decisions.insert(decisions.begin(), cls);
  out.output = {Modality::kTabular, concat(decisions, 1)};
  return out;
}

TabularDecoder::TabularDecoder(ParameterStore& store, const std::string& name, const TabularEncoderConfig& cfg)
    : cfg_(cfg) {
  for (std::size_t s = 0; s < cfg.n_decision_steps; ++s) {
    const std::string step = name + ".step" + std::to_string(s);
    blocks_.emplace_back(store, step + ".glu", cfg.d_model, cfg.d_model, true);
    heads_.emplace_back(store, step + ".fc", cfg.d_model, cfg.n_features);
  }
}

Tensor TabularDecoder::operator()(const EncoderOutput& states) const {
  const std::size_t n = states.count(), d = cfg_.d_model;
  if (states.tokens() != cfg_.n_decision_steps || states.width() != d) {
    throw Error("tabular decoder: expected " + std::to_string(cfg_.n_decision_steps) + " step states of width " +
                std::to_string(d));
  }
  Tensor total;
  for (std::size_t s = 0; s < cfg_.n_decision_steps; ++s) {
    Tensor step = reshape(slice(states.hidden_states, 1, s + 1, 1), {n, d});
    Tensor recon = heads_[s](blocks_[s](step));
    total = total.defined() ? add(total, recon) : recon;
  }
  return scale(total, 1.0 / static_cast<double>(cfg_.n_decision_steps));
}

TimeSeriesEncoder::TimeSeriesEncoder(ParameterStore& store, const std::string& name,
                                     const TimeSeriesEncoderConfig& cfg)
    : cfg_(cfg) {
  cfg.transformer.validate(name);
  const std::size_t d = cfg.transformer.d_model;
  input_projection_ = Linear(store, name + ".input_projection", cfg.n_variables, d);
  position_embedding_ =
      store.create(name + ".position_embedding", {cfg.series_length + 1, d}, Init::normal(kEmbeddingStd));
  cls_ = store.create(name + ".cls", {d}, Init::normal(kEmbeddingStd));
  stack_ = TransformerStack(store, name + ".stack", cfg.transformer);
}

EncoderOutput TimeSeriesEncoder::operator()(const SeriesBatch& batch, const ForwardContext& ctx) const {
  const std::size_t n = batch.count, t = cfg_.series_length, v = cfg_.n_variables;
  if (n == 0) throw Error("time-series encoder: empty batch");
  if (batch.values.size() != n * t * v) {
    throw Error("time-series encoder: expected series of " + std::to_string(t) + "x" + std::to_string(v));
  }
  Tensor x = input_projection_(Tensor({n, t, v}, batch.values));
  x = add(prepend_cls(cls_, x), position_embedding_);
  return {Modality::kTimeSeries, stack_(ctx.dropout(x, cfg_.transformer.dropout), ctx)};
}

TextBatch make_text_batch(std::span<const MultimodalSample* const> samples) {
  TextBatch b;
  b.count = samples.size();
  for (const auto* s : samples) {
    if (!s->text) throw Error("text batch: sample " + std::to_string(s->id) + " has no text");
    if (b.length == 0) b.length = s->text->size();
    if (s->text->size() != b.length) throw Error("text batch: ragged sequence lengths");
    b.ids.insert(b.ids.end(), s->text->begin(), s->text->end());
  }
  return b;
}

ImageBatch make_image_batch(std::span<const MultimodalSample* const> samples) {
  ImageBatch b;
  b.count = samples.size();
  bool any_mask = false;
  for (const auto* s : samples) any_mask = any_mask || !s->masked_patches.empty();
  for (const auto* s : samples) {
    if (!s->image) throw Error("image batch: sample " + std::to_string(s->id) + " has no image");
    b.pixels.insert(b.pixels.end(), s->image->pixels.begin(), s->image->pixels.end());
  }
  if (any_mask) {
    for (const auto* s : samples) {
      if (s->masked_patches.empty()) throw Error("image batch: mixing masked and unmasked images");
      b.masked_patches.insert(b.masked_patches.end(), s->masked_patches.begin(), s->masked_patches.end());
    }
  }
  return b;
}

TabularBatch make_tabular_batch(std::span<const MultimodalSample* const> samples) {
  TabularBatch b;
  b.count = samples.size();
  for (const auto* s : samples) {
    if (!s->tabular) throw Error("tabular batch: sample " + std::to_string(s->id) + " has no tabular row");
    b.values.insert(b.values.end(), s->tabular->begin(), s->tabular->end());
    if (s->tabular_visibility.empty()) {
      b.visibility.insert(b.visibility.end(), s->tabular->size(), 1.0);
    } else {
      b.visibility.insert(b.visibility.end(), s->tabular_visibility.begin(), s->tabular_visibility.end());
    }
  }
  return b;
}

SeriesBatch make_series_batch(std::span<const MultimodalSample* const> samples) {
  SeriesBatch b;
  b.count = samples.size();
  for (const auto* s : samples) {
    if (!s->timeseries) throw Error("series batch: sample " + std::to_string(s->id) + " has no time series");
    b.values.insert(b.values.end(), s->timeseries->values.begin(), s->timeseries->values.end());
  }
  return b;
}

}  // namespace lanistr
