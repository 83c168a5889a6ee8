#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "lanistr/masking.hpp"
#include "lanistr/tensor.hpp"

using namespace lanistr;

namespace {

std::vector<int> content_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(SpecialTokens::kFirstContent, static_cast<int>(vocab) - 1);
  std::vector<int> t(n);
  for (int& x : t) x = d(rng);
  return t;
}

ImagePayload ramp_image(std::size_t size, std::size_t channels) {
  ImagePayload img{size, size, channels, std::vector<double>(size * size * channels)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 1.0 + static_cast<double>(i);
  return img;
}

SeriesPayload ramp_series(std::size_t t, std::size_t v) {
  SeriesPayload s{t, v, std::vector<double>(t * v)};
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = 1.0 + static_cast<double>(i);
  return s;
}

}  // namespace

TEST(MaskText, SelectedCountInBinomialBand) {
  std::mt19937_64 rng(1);
  const auto tokens = content_tokens(10000, 64, rng);
  const MaskedText m = mask_text(tokens, {}, rng);
  EXPECT_GE(m.descriptor.positions.size(), 1400u);
  EXPECT_LE(m.descriptor.positions.size(), 1600u);
}

TEST(MaskText, ForcedMinimumSelectsExactlyOne) {
  std::mt19937_64 rng(2);
  const auto tokens = content_tokens(20, 64, rng);
  TextMaskConfig cfg;
  cfg.ratio = 1e-12;
  for (int trial = 0; trial < 20; ++trial) EXPECT_EQ(mask_text(tokens, cfg, rng).descriptor.positions.size(), 1u);
}

TEST(MaskText, ReplacementMix) {
  std::mt19937_64 rng(3);
  std::size_t selected = 0, masked = 0, unchanged = 0;
  while (selected < 10000) {
    const auto tokens = content_tokens(200, 64, rng);
    const MaskedText m = mask_text(tokens, {}, rng);
    for (std::size_t i = 0; i < m.descriptor.positions.size(); ++i) {
      const std::size_t p = m.descriptor.positions[i];
      ++selected;
      if (m.tokens[p] == SpecialTokens::kMask) ++masked;
      else if (m.tokens[p] == tokens[p]) ++unchanged;
    }
  }
  const double n = static_cast<double>(selected);
  EXPECT_NEAR(masked / n, 0.8, 0.02);
  // A random replacement can coincide with the original token (1 in 61).
  const double same_by_chance = 0.1 / 61.0;
  EXPECT_NEAR(unchanged / n, 0.1 + same_by_chance, 0.02);
  EXPECT_NEAR((selected - masked - unchanged) / n, 0.1 - same_by_chance, 0.02);
}

TEST(MaskText, SpecialTokensNeverSelected) {
  std::mt19937_64 rng(4);
  std::vector<int> tokens = {SpecialTokens::kCls, 5, 6, 7, SpecialTokens::kPad, SpecialTokens::kPad};
  for (int trial = 0; trial < 200; ++trial) {
    for (std::size_t p : mask_text(tokens, {}, rng).descriptor.positions) {
      EXPECT_GE(p, 1u);
      EXPECT_LE(p, 3u);
    }
  }
  EXPECT_THROW(mask_text(std::vector<int>{SpecialTokens::kPad, SpecialTokens::kCls}, {}, rng), Error);
  TextMaskConfig bad;
  bad.ratio = 1.0;
  EXPECT_THROW(mask_text(tokens, bad, rng), Error);
  bad.ratio = 0.0;
  EXPECT_THROW(mask_text(tokens, bad, rng), Error);
}

TEST(MaskImage, ExactCountAndGuards) {
  std::mt19937_64 rng(5);
  const ImagePayload img = ramp_image(16, 1);
  EXPECT_EQ(patch_count(img, 4), 16u);
  const MaskedImage m = mask_image_patches(img, 4, 0.5, rng);
  EXPECT_EQ(m.descriptor.positions.size(), 8u);
  EXPECT_EQ(m.descriptor.values_per_position, 16u);
  EXPECT_THROW(mask_image_patches(img, 4, 0.99, rng), Error);
  EXPECT_THROW(mask_image_patches(img, 4, 0.01, rng), Error);
  EXPECT_THROW(mask_image_patches(img, 5, 0.5, rng), Error);
}

TEST(MaskImage, SeedDeterminism) {
  const ImagePayload img = ramp_image(16, 1);
  auto positions = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return mask_image_patches(img, 4, 0.5, rng).descriptor.positions;
  };
  EXPECT_EQ(positions(1), positions(1));
  EXPECT_NE(positions(1), positions(2));
}

TEST(MaskImage, MaskedPatchesZeroedAndOthersUntouched) {
  std::mt19937_64 rng(6);
  const ImagePayload img = ramp_image(8, 3);
  const MaskedImage m = mask_image_patches(img, 4, 0.5, rng);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto out = extract_patch(m.image, 4, p);
    const auto in = extract_patch(img, 4, p);
    if (m.masked_patches[p]) {
      for (double v : out) EXPECT_EQ(v, 0.0);
    } else {
      EXPECT_EQ(out, in);
    }
  }
}

TEST(MaskTabular, RatioOverManyTrials) {
  std::mt19937_64 rng(7);
  const std::vector<double> f = {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8};
  std::size_t masked = 0;
  const std::size_t trials = 100000;
  for (std::size_t t = 0; t < trials; ++t) masked += mask_tabular(f, 0.15, rng).descriptor.positions.size();
  const double frac = static_cast<double>(masked) / static_cast<double>(trials * f.size());
  EXPECT_GE(frac, 0.14);
  EXPECT_LE(frac, 0.16);
}

TEST(MaskTabular, GuardsAndVisibility) {
  std::mt19937_64 rng(8);
  const std::vector<double> f = {1.5, -2.0, 0.5, 3.0};
  for (int trial = 0; trial < 500; ++trial) {
    const MaskedTabular m = mask_tabular(f, 0.999, rng);
    std::size_t visible = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      visible += m.visibility[i] == 1.0 ? 1 : 0;
      EXPECT_EQ(m.visibility[i] * m.features[i], m.features[i]);
      if (m.visibility[i] == 1.0) EXPECT_EQ(m.features[i], f[i]);
      else EXPECT_EQ(m.features[i], 0.0);
    }
    EXPECT_GE(visible, 1u);
    EXPECT_GE(m.descriptor.positions.size(), 1u);
  }
  EXPECT_THROW(mask_tabular(std::vector<double>{1.0}, 0.15, rng), Error);
}

TEST(MaskSeries, UnmaskedMeanFromStationarity) { EXPECT_NEAR(geometric_unmasked_mean(0.15, 3.0), 17.0, 1e-12); }

TEST(MaskSeries, FractionAndSegmentLength) {
  std::mt19937_64 rng(9);
  const SeriesPayload s = ramp_series(100000, 1);
  const MaskedSeries m = mask_timeseries_geometric(s, 0.15, 3.0, rng);
  const double frac = static_cast<double>(m.descriptor.positions.size()) / 100000.0;
  EXPECT_GE(frac, 0.14);
  EXPECT_LE(frac, 0.16);
  std::size_t runs = 0;
  for (std::size_t i = 0; i < m.descriptor.positions.size(); ++i) {
    if (i == 0 || m.descriptor.positions[i] != m.descriptor.positions[i - 1] + 1) ++runs;
  }
  const double mean_len = static_cast<double>(m.descriptor.positions.size()) / static_cast<double>(runs);
  EXPECT_GE(mean_len, 2.8);
  EXPECT_LE(mean_len, 3.2);
}

TEST(MaskSeries, ColumnsIndependentAndNeverFullyMasked) {
  std::mt19937_64 rng(10);
  const SeriesPayload two = ramp_series(200, 2);
  const MaskedSeries m = mask_timeseries_geometric(two, 0.15, 3.0, rng);
  std::vector<std::size_t> c0, c1;
  for (std::size_t p : m.descriptor.positions) (p % 2 == 0 ? c0 : c1).push_back(p / 2);
  EXPECT_NE(c0, c1);

  const SeriesPayload desk = ramp_series(12, 4);
  for (int trial = 0; trial < 10000; ++trial) {
    const MaskedSeries d = mask_timeseries_geometric(desk, 0.5, 3.0, rng);
    std::vector<std::size_t> per_col(4, 0);
    for (std::size_t p : d.descriptor.positions) ++per_col[p % 4];
    for (std::size_t c : per_col) ASSERT_LT(c, 12u);
  }
  EXPECT_THROW(mask_timeseries_geometric(desk, 0.15, 12.0, rng), Error);
  EXPECT_THROW(mask_timeseries_geometric(ramp_series(1, 4), 0.15, 0.5, rng), Error);
}

TEST(MaskedView, DescriptorsRoundTripAndUnmaskedUntouched) {
  std::mt19937_64 rng(11);
  MultimodalSample s;
  s.id = 42;
  s.text = content_tokens(16, 64, rng);
  s.image = ramp_image(16, 1);
  s.tabular = std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  s.timeseries = ramp_series(12, 4);
  const MaskedView v = make_masked_view(s, {}, 7);
  ASSERT_EQ(v.descriptors.size(), 4u);

  // Writing the originals back at their positions restores the input.
  MultimodalSample restored = v.sample;
  const MaskDescriptor* d = v.descriptor(Modality::kText);
  for (std::size_t i = 0; i < d->positions.size(); ++i) (*restored.text)[d->positions[i]] = static_cast<int>(d->originals[i]);
  EXPECT_EQ(*restored.text, *s.text);

  d = v.descriptor(Modality::kImage);
  const std::size_t per_row = 16 / 4;
  for (std::size_t i = 0; i < d->positions.size(); ++i) {
    const std::size_t pr = d->positions[i] / per_row, pc = d->positions[i] % per_row;
    std::size_t k = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) restored.image->pixels[(pr * 4 + r) * 16 + pc * 4 + c] = d->originals[i * 16 + k++];
    }
  }
  EXPECT_EQ(restored.image->pixels, s.image->pixels);

  d = v.descriptor(Modality::kTabular);
  for (std::size_t i = 0; i < d->positions.size(); ++i) (*restored.tabular)[d->positions[i]] = d->originals[i];
  EXPECT_EQ(*restored.tabular, *s.tabular);

  d = v.descriptor(Modality::kTimeSeries);
  for (std::size_t i = 0; i < d->positions.size(); ++i) restored.timeseries->values[d->positions[i]] = d->originals[i];
  EXPECT_EQ(restored.timeseries->values, s.timeseries->values);

  for (const auto& desc : v.descriptors) {
    std::set<std::size_t> unique(desc.positions.begin(), desc.positions.end());
    EXPECT_EQ(unique.size(), desc.positions.size());
    EXPECT_EQ(desc.originals.size(), desc.positions.size() * desc.values_per_position);
  }
}

TEST(MaskedView, AbsentModalityHasNoDescriptor) {
  MultimodalSample s;
  s.id = 3;
  s.tabular = std::vector<double>{1, 2, 3};
  const MaskedView v = make_masked_view(s, {}, 1);
  EXPECT_EQ(v.descriptors.size(), 1u);
  EXPECT_EQ(v.descriptor(Modality::kText), nullptr);
  EXPECT_NE(v.descriptor(Modality::kTabular), nullptr);
}

TEST(MaskedView, SeedsDetermineMasks) {
  std::mt19937_64 rng(12);
  MultimodalSample s;
  s.id = 9;
  s.text = content_tokens(16, 64, rng);
  s.image = ramp_image(16, 1);
  s.tabular = std::vector<double>(8, 0.5);
  s.timeseries = ramp_series(12, 4);
  EXPECT_EQ(make_masked_view(s, {}, 5).descriptors, make_masked_view(s, {}, 5).descriptors);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EXPECT_NE(make_masked_view(s, {}, 2 * seed).descriptors, make_masked_view(s, {}, 2 * seed + 1).descriptors);
  }
}
