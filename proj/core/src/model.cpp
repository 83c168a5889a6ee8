#include "lanistr/model.hpp"

#include <algorithm>

namespace lanistr {

namespace prefix {
const char* encoder(Modality m) {
  switch (m) {
    case Modality::kText:
      return kText;
    case Modality::kImage:
      return kImage;
    case Modality::kTabular:
      return kTabular;
    case Modality::kTimeSeries:
      return kTimeSeries;
  }
  return kText;
}
}  // namespace prefix

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  const TransformerConfig t{64, 4, 2, 128, 0.1};
  c.text = {t, 64, 16};
  c.image = {t, 16, 1, 4};
  c.tabular = {8, 64, 16, 3, 1.3};
  c.timeseries = {t, 12, 4};
  c.fusion = {t, 128};
  c.classifier_hidden = 64;
  c.n_classes = 2;
  return c;
}

ModelConfig ModelConfig::paper_mimic() {
  ModelConfig c;
  c.modalities = {true, true, false, true};
  const TransformerConfig base{768, 12, 12, 3072, 0.1};
  c.text = {base, 30522, 512};
  c.image = {base, 224, 3, 16};
  c.tabular = {8, 64, 64, 3, 1.3};
  c.timeseries = {{256, 4, 3, 3072, 0.1}, 48, 76};
  c.fusion = {{768, 12, 6, 3072, 0.1}, 2048};
  c.classifier_hidden = 768;
  c.n_classes = 2;
  return c;
}

ModelConfig ModelConfig::paper_amazon() {
  ModelConfig c;
  c.modalities = {true, true, true, false};
  const TransformerConfig base{768, 12, 12, 3072, 0.1};
  c.text = {base, 30522, 512};
  c.image = {base, 224, 3, 16};
  c.tabular = {32, 1024, 64, 3, 1.3};
  c.timeseries = {{256, 4, 3, 3072, 0.1}, 48, 4};
  c.fusion = {{768, 12, 6, 3072, 0.1}, 2048};
  c.classifier_hidden = 768;
  c.n_classes = 5;
  return c;
}

void ModelConfig::validate() const {
  if (std::none_of(modalities.begin(), modalities.end(), [](bool b) { return b; })) {
    throw Error("model config: no modality enabled");
  }
  if (enabled(Modality::kText)) {
    text.transformer.validate("text encoder");
    if (text.vocab_size <= static_cast<std::size_t>(SpecialTokens::kFirstContent)) {
      throw Error("model config: text vocabulary too small");
    }
    if (text.max_length == 0) throw Error("model config: text max_length must be positive");
  }
  if (enabled(Modality::kImage)) {
    image.transformer.validate("image encoder");
    if (image.patch_size == 0 || image.image_size % image.patch_size != 0) {
      throw Error("model config: image size must be divisible by patch size");
    }
  }
  if (enabled(Modality::kTabular)) {
    if (tabular.n_features < 2 || tabular.d_model == 0 || tabular.d_attention == 0 || tabular.n_decision_steps == 0) {
      throw Error("model config: invalid tabular encoder dimensions");
    }
    if (tabular.gamma < 1.0) throw Error("model config: tabular prior relaxation must be >= 1");
  }
  if (enabled(Modality::kTimeSeries)) {
    timeseries.transformer.validate("time-series encoder");
    if (timeseries.series_length < 2 || timeseries.n_variables == 0) {
      throw Error("model config: invalid time-series dimensions");
    }
  }
  fusion.transformer.validate("fusion encoder");
  if (fusion.projector_hidden == 0 || classifier_hidden == 0) throw Error("model config: zero hidden width");
  if (n_classes < 2) throw Error("model config: need at least 2 classes");
}

LanistrModel::LanistrModel(const ModelConfig& cfg, std::uint64_t seed) : LanistrModel(cfg, seed, true) {}

LanistrModel::LanistrModel(const ModelConfig& cfg, std::uint64_t seed, bool allocate)
    : cfg_(cfg), store_(seed, allocate) {
  cfg.validate();
  std::array<std::size_t, kNumModalities> widths{};
  std::size_t max_tokens = 1;
  if (cfg.enabled(Modality::kText)) {
    text_ = std::make_unique<TextEncoder>(store_, "text_encoder", cfg.text);
    widths[index_of(Modality::kText)] = cfg.text.transformer.d_model;
    max_tokens = std::max(max_tokens, cfg.text.max_length + 1);
  }
  if (cfg.enabled(Modality::kImage)) {
    image_ = std::make_unique<ImageEncoder>(store_, "image_encoder", cfg.image);
    widths[index_of(Modality::kImage)] = cfg.image.transformer.d_model;
    max_tokens = std::max(max_tokens, cfg.image.patches() + 1);
  }
  if (cfg.enabled(Modality::kTabular)) {
    tabular_ = std::make_unique<TabularEncoder>(store_, "tabular_encoder", cfg.tabular);
    widths[index_of(Modality::kTabular)] = cfg.tabular.d_model;
    max_tokens = std::max(max_tokens, cfg.tabular.n_decision_steps + 1);
  }
  if (cfg.enabled(Modality::kTimeSeries)) {
    series_ = std::make_unique<TimeSeriesEncoder>(store_, "timeseries_encoder", cfg.timeseries);
    widths[index_of(Modality::kTimeSeries)] = cfg.timeseries.transformer.d_model;
    max_tokens = std::max(max_tokens, cfg.timeseries.series_length + 1);
  }
  const std::size_t d = cfg.fusion.transformer.d_model;
  fusion_ = FusionEncoder(store_, "fusion", cfg.fusion, cfg.modalities, widths, max_tokens);
  projector_ = Projector(store_, "projector", d, cfg.fusion.projector_hidden);
  if (text_) mlm_head_ = Linear(store_, "heads.mlm", cfg.text.transformer.d_model, cfg.text.vocab_size);
  if (image_) pixel_head_ = Linear(store_, "heads.mim", cfg.image.transformer.d_model, cfg.image.patch_dim());
  if (tabular_) tabular_decoder_ = std::make_unique<TabularDecoder>(store_, "heads.mfm", cfg.tabular);
  if (series_) series_head_ = Linear(store_, "heads.mtm", cfg.timeseries.transformer.d_model, cfg.timeseries.n_variables);
  classifier_in_ = Linear(store_, "classifier.in", d, cfg.classifier_hidden);
  classifier_out_ = Linear(store_, "classifier.out", cfg.classifier_hidden, cfg.n_classes);
}

ParameterCounts LanistrModel::count_parameters(const ModelConfig& cfg) {
  LanistrModel shape_only(cfg, 0, false);
  return shape_only.counts();
}

ParameterCounts LanistrModel::counts() const {
  ParameterCounts c;
  c.pretraining_only = store_.count(prefix::kProjector) + store_.count(prefix::kHeads);
  c.total = store_.count() - c.pretraining_only;
  c.trainable = store_.count(prefix::kFusion) + store_.count(prefix::kClassifier);
  return c;
}

EncoderOutput LanistrModel::encode_modality(Modality m, std::span<const MultimodalSample* const> samples,
                                            const ForwardContext& ctx) const {
  switch (m) {
    case Modality::kText:
      if (!text_) break;
      return (*text_)(make_text_batch(samples), ctx);
    case Modality::kImage:
      if (!image_) break;
      return (*image_)(make_image_batch(samples), ctx);
    case Modality::kTabular:
      if (!tabular_) break;
      return (*tabular_)(make_tabular_batch(samples), ctx);
    case Modality::kTimeSeries:
      if (!series_) break;
      return (*series_)(make_series_batch(samples), ctx);
  }
  throw Error("model: modality " + std::string(modality_name(m)) + " is not enabled");
}

EncodedBatch LanistrModel::encode(std::span<const MultimodalSample* const> batch, const ForwardContext& ctx) const {
  EncodedBatch out;
  out.batch_size = batch.size();
  for (const auto* s : batch) out.presence.push_back(s->presence());
  for (Modality m : kAllModalities) {
    if (!cfg_.enabled(m)) continue;
    std::vector<const MultimodalSample*> members;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      if (batch[r]->present(m)) {
        members.push_back(batch[r]);
        out.members[index_of(m)].push_back(r);
      }
    }
    if (!members.empty()) out.outputs[index_of(m)] = encode_modality(m, members, ctx);
  }
  return out;
}

Tensor LanistrModel::classify(const Tensor& z, const ForwardContext& ctx) const {
  return classifier_out_(ctx.dropout(gelu(classifier_in_(z)), cfg_.fusion.transformer.dropout));
}

namespace {
Tensor token_states(const EncoderOutput& out) {
  return slice(out.hidden_states, 1, 1, out.tokens());
}
}  // namespace

Tensor LanistrModel::mlm_logits(const EncoderOutput& text) const { return mlm_head_(token_states(text)); }

Tensor LanistrModel::pixel_predictions(const EncoderOutput& image) const { return pixel_head_(token_states(image)); }

Tensor LanistrModel::tabular_reconstruction(const EncoderOutput& tab) const { return (*tabular_decoder_)(tab); }

Tensor LanistrModel::series_predictions(const EncoderOutput& series) const { return series_head_(token_states(series)); }

void LanistrModel::freeze_unimodal_encoders(bool frozen) {
  for (Modality m : kAllModalities) store_.set_frozen(prefix::encoder(m), frozen);
}

}  // namespace lanistr
