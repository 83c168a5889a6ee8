#pragma once

#include <span>
#include <string>
#include <vector>

#include "lanistr/layers.hpp"
#include "lanistr/sample.hpp"

namespace lanistr {

/// Hidden states of one modality for a batch: [n, 1 + N_tokens, d_model], row 0
/// of every sample is its classification-token state.
struct EncoderOutput {
  Modality modality = Modality::kText;
  Tensor hidden_states;

  std::size_t count() const { return hidden_states.dim(0); }
  std::size_t tokens() const { return hidden_states.dim(1) - 1; }
  std::size_t width() const { return hidden_states.dim(2); }
};

struct TextEncoderConfig {
  TransformerConfig transformer;
  std::size_t vocab_size = 64;
  std::size_t max_length = 16;
};

struct ImageEncoderConfig {
  TransformerConfig transformer;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;

  std::size_t patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
};

struct TabularEncoderConfig {
  std::size_t n_features = 8;
  std::size_t d_model = 64;  // decision width; also the output token width
  std::size_t d_attention = 16;
  std::size_t n_decision_steps = 3;
  double gamma = 1.3;
};

struct TimeSeriesEncoderConfig {
  TransformerConfig transformer;
  std::size_t series_length = 12;
  std::size_t n_variables = 4;
};

struct TextBatch {
  std::size_t count = 0;
  std::size_t length = 0;
  std::vector<int> ids;  // count x length
};

struct ImageBatch {
  std::size_t count = 0;
  std::vector<double> pixels;        // count x H x W x C
  std::vector<bool> masked_patches;  // count x patches, may be empty
};

struct TabularBatch {
  std::size_t count = 0;
  std::vector<double> values;      // count x F
  std::vector<double> visibility;  // count x F
};

struct SeriesBatch {
  std::size_t count = 0;
  std::vector<double> values;  // count x T x V
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParameterStore& store, const std::string& name, const TextEncoderConfig& cfg);

  EncoderOutput operator()(const TextBatch& batch, const ForwardContext& ctx) const;
  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  Tensor token_embedding_, position_embedding_, cls_;
  TransformerStack stack_;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(ParameterStore& store, const std::string& name, const ImageEncoderConfig& cfg);

  EncoderOutput operator()(const ImageBatch& batch, const ForwardContext& ctx) const;
  const ImageEncoderConfig& config() const { return cfg_; }

 private:
  ImageEncoderConfig cfg_;
  Linear patch_embedding_;
  Tensor mask_embedding_, position_embedding_, cls_;
  TransformerStack stack_;
};

/// Gated linear unit block: GLU(x W + b) with an optional scaled residual.
class GluBlock {
 public:
  GluBlock() = default;
  GluBlock(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool residual);

  Tensor operator()(const Tensor& x) const;

 private:
  Linear fc_;
  bool residual_ = false;
};

/// Chain of GLU blocks; `shared` blocks may be reused by several steps.
class FeatureTransformer {
 public:
  FeatureTransformer() = default;
  FeatureTransformer(const std::vector<const GluBlock*>& shared, std::vector<GluBlock> own);

  Tensor operator()(const Tensor& x) const;

 private:
  std::vector<const GluBlock*> shared_;
  std::vector<GluBlock> own_;
};

struct TabularEncoderOutput {
  EncoderOutput output;
  std::vector<Tensor> step_masks;  // per decision step: [n, 2F] feature-selection masks
};

/// Sequential attentive encoder for tabular rows. The encoder input is the
/// feature vector concatenated with its visibility indicator; each decision
/// step selects inputs through a sparsemax mask scaled by a prior that decays
/// for inputs already used.
class TabularEncoder {
 public:
  TabularEncoder(ParameterStore& store, const std::string& name, const TabularEncoderConfig& cfg);
  TabularEncoder(const TabularEncoder&) = delete;
  TabularEncoder& operator=(const TabularEncoder&) = delete;

  TabularEncoderOutput forward(const TabularBatch& batch, const ForwardContext& ctx) const;
  EncoderOutput operator()(const TabularBatch& batch, const ForwardContext& ctx) const {
    return forward(batch, ctx).output;
  }
  const TabularEncoderConfig& config() const { return cfg_; }

 private:
  TabularEncoderConfig cfg_;
  std::vector<GluBlock> shared_blocks_;
  FeatureTransformer initial_;
  std::vector<FeatureTransformer> step_transformers_;
  std::vector<Linear> attentive_;
  Linear cls_projection_;
};

/// Per-step decoder used only for masked feature reconstruction.
class TabularDecoder {
 public:
  TabularDecoder(ParameterStore& store, const std::string& name, const TabularEncoderConfig& cfg);

  /// Mean over decision steps of the per-step reconstructions; returns [n, F].
  Tensor operator()(const EncoderOutput& states) const;

 private:
  TabularEncoderConfig cfg_;
  std::vector<GluBlock> blocks_;
  std::vector<Linear> heads_;
};

class TimeSeriesEncoder {
 public:
  TimeSeriesEncoder() = default;
  TimeSeriesEncoder(ParameterStore& store, const std::string& name, const TimeSeriesEncoderConfig& cfg);

  EncoderOutput operator()(const SeriesBatch& batch, const ForwardContext& ctx) const;
  const TimeSeriesEncoderConfig& config() const { return cfg_; }

 private:
  TimeSeriesEncoderConfig cfg_;
  Linear input_projection_;
  Tensor position_embedding_, cls_;
  TransformerStack stack_;
};

// Batch assembly from samples. Each sample must carry the modality.
TextBatch make_text_batch(std::span<const MultimodalSample* const> samples);
ImageBatch make_image_batch(std::span<const MultimodalSample* const> samples);
TabularBatch make_tabular_batch(std::span<const MultimodalSample* const> samples);
SeriesBatch make_series_batch(std::span<const MultimodalSample* const> samples);

/// [n, H, W, C] pixels -> [n, patches, p*p*C] in the same patch order as the masker.
std::vector<double> patchify(std::span<const double> pixels, std::size_t count, std::size_t image_size,
                             std::size_t channels, std::size_t patch_size);

}  // namespace lanistr
