#pragma once

#include <cstdint>
#include <memory>
#include <span>

#include "lanistr/encoders.hpp"
#include "lanistr/fusion.hpp"
#include "lanistr/layers.hpp"
#include "lanistr/parameter.hpp"

namespace lanistr {

struct ModelConfig {
  ModalitySet modalities = {true, true, true, false};
  TextEncoderConfig text;
  ImageEncoderConfig image;
  TabularEncoderConfig tabular;
  TimeSeriesEncoderConfig timeseries;
  FusionConfig fusion;
  std::size_t classifier_hidden = 64;
  std::size_t n_classes = 2;

  /// d_model 64, 2 layers, 4 heads, vocab 64, 4x4 patches on 16x16 images,
  /// 3 decision steps, 12x4 series.
  static ModelConfig desk();
  /// Published sizes for the healthcare setup (text, image, time series).
  static ModelConfig paper_mimic();
  /// Published sizes for the retail setup (text, image, tabular).
  static ModelConfig paper_amazon();

  void validate() const;
  bool enabled(Modality m) const { return modalities[index_of(m)]; }
};

/// Parameter name prefixes.
namespace prefix {
inline constexpr const char* kText = "text_encoder.";
inline constexpr const char* kImage = "image_encoder.";
inline constexpr const char* kTabular = "tabular_encoder.";
inline constexpr const char* kTimeSeries = "timeseries_encoder.";
inline constexpr const char* kFusion = "fusion.";
inline constexpr const char* kProjector = "projector.";
inline constexpr const char* kHeads = "heads.";
inline constexpr const char* kClassifier = "classifier.";
const char* encoder(Modality m);
}  // namespace prefix

struct ParameterCounts {
  std::size_t total = 0;      // everything a fine-tuned classifier keeps
  std::size_t trainable = 0;  // fusion + classifier
  std::size_t pretraining_only = 0;

  double trainable_fraction() const { return total ? static_cast<double>(trainable) / static_cast<double>(total) : 0.0; }
};

/// Unimodal encoders, the fusion encoder, the SimMMM projector, the four
/// pretraining heads and the downstream classifier, all in one parameter store.
class LanistrModel {
 public:
  LanistrModel(const ModelConfig& cfg, std::uint64_t seed);
  LanistrModel(const LanistrModel&) = delete;
  LanistrModel& operator=(const LanistrModel&) = delete;

  /// Counts without allocating; works for the published presets.
  static ParameterCounts count_parameters(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Runs every enabled encoder on the samples that carry its modality.
  EncodedBatch encode(std::span<const MultimodalSample* const> batch, const ForwardContext& ctx) const;
  EncoderOutput encode_modality(Modality m, std::span<const MultimodalSample* const> samples,
                                const ForwardContext& ctx) const;

  FusionOutput fuse(const EncodedBatch& batch, const ForwardContext& ctx) const { return fusion_(batch, ctx); }
  Tensor project(const Tensor& z) const { return projector_(z); }
  /// Class logits [B, n_classes].
  Tensor classify(const Tensor& z, const ForwardContext& ctx) const;

  // Pretraining heads over encoder outputs (classification token excluded).
  Tensor mlm_logits(const EncoderOutput& text) const;           // [n, L, vocab]
  Tensor pixel_predictions(const EncoderOutput& image) const;   // [n, patches, patch_dim]
  Tensor tabular_reconstruction(const EncoderOutput& tab) const;  // [n, F]
  Tensor series_predictions(const EncoderOutput& series) const;  // [n, T, V]

  const TabularEncoder& tabular_encoder() const { return *tabular_; }
  const FusionEncoder& fusion_encoder() const { return fusion_; }

  void freeze_unimodal_encoders(bool frozen);
  ParameterCounts counts() const;

 private:
  LanistrModel(const ModelConfig& cfg, std::uint64_t seed, bool allocate);

  ModelConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<ImageEncoder> image_;
  std::unique_ptr<TabularEncoder> tabular_;
  std::unique_ptr<TimeSeriesEncoder> series_;
  FusionEncoder fusion_;
  Projector projector_;
  Linear mlm_head_, pixel_head_, series_head_;
  std::unique_ptr<TabularDecoder> tabular_decoder_;
  Linear classifier_in_, classifier_out_;
};

}  // namespace lanistr
