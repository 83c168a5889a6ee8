#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lanistr/sample.hpp"

namespace lanistr {

/// Which positions of one modality payload were hidden, and what was there.
///
/// Positions are token indices (text), patch indices (image), feature columns
/// (tabular) or flattened `t * V + v` cells (time series). Each position owns
/// `values_per_position` consecutive entries of `originals`: one everywhere
/// except image, where it is the patch's pixel count.
struct MaskDescriptor {
  Modality modality = Modality::kText;
  std::vector<std::size_t> positions;
  std::vector<double> originals;
  std::size_t values_per_position = 1;
  double ratio_applied = 0.0;

  bool empty() const { return positions.empty(); }
  bool operator==(const MaskDescriptor&) const = default;
};

struct TextMaskConfig {
  double ratio = 0.15;
  std::size_t vocab_size = 64;
  // Replacement mix for selected positions; the remainder stays unchanged.
  double mask_token_prob = 0.8;
  double random_token_prob = 0.1;
};

struct MaskedText {
  std::vector<int> tokens;
  MaskDescriptor descriptor;
};

/// Independent per-position selection with at least one forced pick. Special
/// ids (pad, cls, mask) are never candidates.
MaskedText mask_text(std::span<const int> tokens, const TextMaskConfig& cfg, std::mt19937_64& rng);

struct MaskedImage {
  ImagePayload image;  // masked patches zeroed
  std::vector<bool> masked_patches;
  MaskDescriptor descriptor;
};

std::size_t patch_count(const ImagePayload& image, std::size_t patch_size);
/// Pixels of one patch in (row, col, channel) order.
std::vector<double> extract_patch(const ImagePayload& image, std::size_t patch_size, std::size_t patch);

/// Exactly round(ratio * patches) patches, drawn without replacement.
MaskedImage mask_image_patches(const ImagePayload& image, std::size_t patch_size, double ratio, std::mt19937_64& rng);

struct MaskedTabular {
  std::vector<double> features;    // masked cells zeroed
  std::vector<double> visibility;  // 1 visible, 0 masked
  MaskDescriptor descriptor;
};

/// Per-column Bernoulli masking with at least one masked and one visible column.
/// Draws violating either guard are redrawn, with the column probability raised
/// or lowered so that `ratio` of the columns are masked on average.
MaskedTabular mask_tabular(std::span<const double> features, double ratio, std::mt19937_64& rng);

struct MaskedSeries {
  SeriesPayload series;  // masked cells zeroed
  MaskDescriptor descriptor;
};

/// Expected unmasked run length that makes `ratio` the stationary masked fraction.
double geometric_unmasked_mean(double ratio, double mean_mask_len);

/// Per-variable alternating masked/unmasked runs with geometric lengths. A column
/// that comes out fully masked is redrawn.
MaskedSeries mask_timeseries_geometric(const SeriesPayload& series, double ratio, double mean_mask_len,
                                       std::mt19937_64& rng);

struct MaskingConfig {
  double text_ratio = 0.15;
  double image_ratio = 0.5;
  double tabular_ratio = 0.15;
  double timeseries_ratio = 0.15;
  double timeseries_mean_mask_len = 3.0;
  std::size_t patch_size = 4;
  std::size_t vocab_size = 64;
  double text_mask_token_prob = 0.8;
  double text_random_token_prob = 0.1;
};

struct MaskedView {
  MultimodalSample sample;
  std::vector<MaskDescriptor> descriptors;

  const MaskDescriptor* descriptor(Modality m) const;
};

/// Masks every present modality with its own stream derived from
/// (seed, sample.id, modality).
MaskedView make_masked_view(const MultimodalSample& sample, const MaskingConfig& cfg, std::uint64_t seed);

}  // namespace lanistr
