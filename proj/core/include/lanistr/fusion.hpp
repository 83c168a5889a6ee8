#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lanistr/encoders.hpp"
#include "lanistr/layers.hpp"

namespace lanistr {

struct FusionConfig {
  TransformerConfig transformer;  // d_model is the fusion width
  std::size_t projector_hidden = 128;
};

/// Unimodal encoder outputs for one batch. `members[m][i]` is the batch row of
/// encoder row i of modality m.
struct EncodedBatch {
  std::size_t batch_size = 0;
  std::array<std::optional<EncoderOutput>, kNumModalities> outputs;
  std::array<std::vector<std::size_t>, kNumModalities> members;
  std::vector<ModalitySet> presence;
};

inline constexpr int kClsSegment = 0;
inline constexpr int segment_of(Modality m) { return 1 + static_cast<int>(m); }

/// Fusion input for samples sharing one presence pattern: [G, L, d_fusion].
struct FusedSequence {
  Tensor tokens;
  std::vector<int> segment_ids;  // length L; position 0 is the classification token
  ModalitySet presence{};
  std::vector<std::size_t> rows;  // batch rows in this group
};

struct FusionOutput {
  Tensor z;  // [B, d_fusion], final classification-token states in batch order
  std::vector<FusedSequence> groups;
  std::vector<Tensor> group_states;  // [G, L, d_fusion] per group
};

/// Projects, concatenates and attends over unimodal hidden states. Absent
/// modalities contribute one learned token each; learned segment and
/// within-segment position embeddings are added to every token.
class FusionEncoder {
 public:
  FusionEncoder() = default;
  FusionEncoder(ParameterStore& store, const std::string& name, const FusionConfig& cfg, const ModalitySet& enabled,
                const std::array<std::size_t, kNumModalities>& input_widths, std::size_t max_segment_tokens);

  /// Sequence for the listed batch rows, which must share one presence pattern.
  FusedSequence project_and_concat(const EncodedBatch& batch, const std::vector<std::size_t>& rows) const;

  FusionOutput operator()(const EncodedBatch& batch, const ForwardContext& ctx) const;

  const ModalitySet& enabled() const { return enabled_; }
  std::size_t width() const { return cfg_.transformer.d_model; }

 private:
  FusionConfig cfg_;
  ModalitySet enabled_{};
  std::array<Linear, kNumModalities> projections_;
  std::array<Tensor, kNumModalities> absent_tokens_;
  Tensor cls_, segment_embedding_, position_embedding_;
  std::size_t max_segment_tokens_ = 0;
  TransformerStack stack_;
};

/// Two-layer perceptron width -> hidden -> width with layer norm and gelu on
/// the hidden layer.
class Projector {
 public:
  Projector() = default;
  Projector(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden);

  Tensor operator()(const Tensor& z) const;

 private:
  Linear in_, out_;
  LayerNorm norm_;
};

}  // namespace lanistr
