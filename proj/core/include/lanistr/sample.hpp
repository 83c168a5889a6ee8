#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lanistr {

enum class Modality : std::uint8_t { kText = 0, kImage = 1, kTabular = 2, kTimeSeries = 3 };

inline constexpr std::size_t kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {
    Modality::kText, Modality::kImage, Modality::kTabular, Modality::kTimeSeries};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
std::string_view modality_name(Modality m);
/// Accepts "text", "image", "tabular", "timeseries".
Modality parse_modality(std::string_view name);

using ModalitySet = std::array<bool, kNumModalities>;

std::string presence_str(const ModalitySet& set);

/// Token ids reserved by every vocabulary.
struct SpecialTokens {
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kMask = 2;
  static constexpr int kFirstContent = 3;
};

struct ImagePayload {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;  // H x W x C, row-major

  bool operator==(const ImagePayload&) const = default;
};

struct SeriesPayload {
  std::size_t length = 0;
  std::size_t variables = 0;
  std::vector<double> values;  // T x V, row-major

  bool operator==(const SeriesPayload&) const = default;
};

/// One record with optional per-modality payloads.
///
/// `tabular_visibility` and `masked_patches` are only set on masked views: the
/// first marks visible (1) vs masked (0) tabular cells, the second flags image
/// patches the encoder must replace by its mask embedding.
struct MultimodalSample {
  std::uint64_t id = 0;
  std::optional<std::vector<int>> text;
  std::optional<ImagePayload> image;
  std::optional<std::vector<double>> tabular;
  std::optional<SeriesPayload> timeseries;
  std::optional<int> label;

  std::vector<double> tabular_visibility;
  std::vector<bool> masked_patches;

  bool present(Modality m) const;
  ModalitySet presence() const;
  std::size_t present_count() const;
  void drop(Modality m);

  bool operator==(const MultimodalSample&) const = default;
};

/// Shapes shared by every sample of a dataset.
struct DatasetInfo {
  std::size_t text_length = 16;
  std::size_t vocab_size = 64;
  std::size_t image_size = 16;
  std::size_t image_channels = 1;
  std::size_t n_features = 8;
  std::size_t series_length = 12;
  std::size_t n_variables = 4;
  std::size_t n_classes = 2;
  // Population std of every stored tabular feature; masked feature
  // reconstruction divides residuals by it.
  std::vector<double> feature_std;

  bool operator==(const DatasetInfo&) const = default;
};

struct Dataset {
  DatasetInfo info;
  std::vector<MultimodalSample> samples;

  bool operator==(const Dataset&) const = default;
};

/// Mixes a base seed with stream tags (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace lanistr
