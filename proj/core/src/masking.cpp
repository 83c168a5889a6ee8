#include "lanistr/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lanistr/tensor.hpp"

namespace lanistr {

namespace {

void check_ratio(double ratio, const char* op) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(std::string(op) + ": ratio " + std::to_string(ratio) + " outside (0, 1)");
  }
}

bool is_special(int id) { return id == SpecialTokens::kPad || id == SpecialTokens::kCls || id == SpecialTokens::kMask; }

}  // namespace

MaskedText mask_text(std::span<const int> tokens, const TextMaskConfig& cfg, std::mt19937_64& rng) {
  check_ratio(cfg.ratio, "mask_text");
  if (tokens.empty()) throw Error("mask_text: empty sequence");
  if (cfg.vocab_size <= static_cast<std::size_t>(SpecialTokens::kFirstContent)) {
    throw Error("mask_text: vocabulary has no content tokens");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_special(tokens[i])) candidates.push_back(i);
  }
  if (candidates.empty()) throw Error("mask_text: sequence holds only special tokens");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> selected;
  for (std::size_t pos : candidates) {
    if (unit(rng) < cfg.ratio) selected.push_back(pos);
  }
  if (selected.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    selected.push_back(candidates[pick(rng)]);
  }

  MaskedText out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.descriptor.modality = Modality::kText;
  std::uniform_int_distribution<int> random_token(SpecialTokens::kFirstContent, static_cast<int>(cfg.vocab_size) - 1);
  for (std::size_t pos : selected) {
    out.descriptor.positions.push_back(pos);
    out.descriptor.originals.push_back(static_cast<double>(tokens[pos]));
    const double u = unit(rng);
    if (u < cfg.mask_token_prob) {
      out.tokens[pos] = SpecialTokens::kMask;
    } else if (u < cfg.mask_token_prob + cfg.random_token_prob) {
      out.tokens[pos] = random_token(rng);
    }
  }
  out.descriptor.ratio_applied = static_cast<double>(selected.size()) / static_cast<double>(candidates.size());
  return out;
}

std::size_t patch_count(const ImagePayload& image, std::size_t patch_size) {
  if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw Error("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                " is not divisible into patches of size " + std::to_string(patch_size));
  }
  return (image.height / patch_size) * (image.width / patch_size);
}

namespace {

template <typename F>
void for_each_patch_pixel(const ImagePayload& image, std::size_t patch_size, std::size_t patch, F f) {
  const std::size_t per_row = image.width / patch_size;
  const std::size_t r0 = (patch / per_row) * patch_size;
  const std::size_t c0 = (patch % per_row) * patch_size;
  for (std::size_t r = 0; r < patch_size; ++r) {
    for (std::size_t c = 0; c < patch_size; ++c) {
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        f(((r0 + r) * image.width + (c0 + c)) * image.channels + ch);
      }
    }
  }
}

}  // namespace

std::vector<double> extract_patch(const ImagePayload& image, std::size_t patch_size, std::size_t patch) {
  std::vector<double> out;
  out.reserve(patch_size * patch_size * image.channels);
  for_each_patch_pixel(image, patch_size, patch, [&](std::size_t i) { out.push_back(image.pixels[i]); });
  return out;
}

MaskedImage mask_image_patches(const ImagePayload& image, std::size_t patch_size, double ratio, std::mt19937_64& rng) {
  check_ratio(ratio, "mask_image_patches");
  const std::size_t n = patch_count(image, patch_size);
  if (n == 0) throw Error("mask_image_patches: image has no patches");
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (count == 0) throw Error("mask_image_patches: ratio masks no patch");
  if (count >= n) throw Error("mask_image_patches: ratio masks every patch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  MaskedImage out;
  out.image = image;
  out.masked_patches.assign(n, false);
  out.descriptor.modality = Modality::kImage;
  out.descriptor.values_per_position = patch_size * patch_size * image.channels;
  for (std::size_t p : chosen) {
    out.masked_patches[p] = true;
    out.descriptor.positions.push_back(p);
    for_each_patch_pixel(image, patch_size, p, [&](std::size_t i) {
      out.descriptor.originals.push_back(image.pixels[i]);
      out.image.pixels[i] = 0.0;
    });
  }
  out.descriptor.ratio_applied = static_cast<double>(count) / static_cast<double>(n);
  return out;
}

namespace {

// Per-column probability q whose draws, conditioned on at least one masked and
// one visible column, mask `ratio` of the columns on average. With K ~ Bin(n, q),
// E[K | 0 < K < n] = (nq - nq^n) / (1 - (1 - q)^n - q^n), increasing in q.
double calibrated_column_probability(std::size_t n, double ratio) {
  const double nn = static_cast<double>(n), target = ratio * nn;
  auto conditional_mean = [&](double q) {
    const double qn = std::pow(q, nn);
    return (nn * q - nn * qn) / (1.0 - std::pow(1.0 - q, nn) - qn);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (conditional_mean(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

MaskedTabular mask_tabular(std::span<const double> features, double ratio, std::mt19937_64& rng) {
  check_ratio(ratio, "mask_tabular");
  const std::size_t n = features.size();
  if (n < 2) throw Error("mask_tabular: need at least 2 features, got " + std::to_string(n));
  const double nn = static_cast<double>(n);
  std::vector<bool> masked(n, false);
  if (ratio * nn <= 1.0 || ratio * nn >= nn - 1.0) {
    // Outside the reachable range the guards decide: mask one column, or all but one.
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const bool many = ratio * nn >= nn - 1.0;
    masked.assign(n, many);
    masked[pick(rng)] = !many;
  } else {
    thread_local std::size_t cached_n = 0;
    thread_local double cached_ratio = -1.0, cached_q = 0.0;
    if (cached_n != n || cached_ratio != ratio) {
      cached_q = calibrated_column_probability(n, ratio);
      cached_n = n;
      cached_ratio = ratio;
    }
    std::bernoulli_distribution column(cached_q);
    std::size_t count = 0;
    do {
      count = 0;
      for (std::size_t j = 0; j < n; ++j) {
        masked[j] = column(rng);
        count += masked[j] ? 1 : 0;
      }
    } while (count == 0 || count == n);
  }

  MaskedTabular out;
  out.features.assign(features.begin(), features.end());
  out.visibility.assign(n, 1.0);
  out.descriptor.modality = Modality::kTabular;
  for (std::size_t j = 0; j < n; ++j) {
    if (!masked[j]) continue;
    out.descriptor.positions.push_back(j);
    out.descriptor.originals.push_back(features[j]);
    out.features[j] = 0.0;
    out.visibility[j] = 0.0;
  }
  out.descriptor.ratio_applied = static_cast<double>(out.descriptor.positions.size()) / static_cast<double>(n);
  return out;
}

double geometric_unmasked_mean(double ratio, double mean_mask_len) { return mean_mask_len * (1.0 - ratio) / ratio; }

MaskedSeries mask_timeseries_geometric(const SeriesPayload& series, double ratio, double mean_mask_len,
                                       std::mt19937_64& rng) {
  check_ratio(ratio, "mask_timeseries_geometric");
  const std::size_t t_len = series.length, n_vars = series.variables;
  if (t_len < 2) throw Error("mask_timeseries_geometric: series needs at least 2 timesteps");
  if (series.values.size() != t_len * n_vars) throw Error("mask_timeseries_geometric: payload size mismatch");
  if (!(mean_mask_len >= 1.0)) throw Error("mask_timeseries_geometric: mean mask length must be >= 1");
  if (mean_mask_len >= static_cast<double>(t_len)) {
    throw Error("mask_timeseries_geometric: mean mask length " + std::to_string(mean_mask_len) +
                " must be shorter than the series (" + std::to_string(t_len) + ")");
  }
  // Two-state Markov chain: leave a masked run with p_end_mask, an unmasked run
  // with p_end_unmask, so run lengths are geometric with the requested means.
  const double p_end_mask = 1.0 / mean_mask_len;
  const double p_end_unmask = 1.0 / geometric_unmasked_mean(ratio, mean_mask_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<bool> mask(t_len * n_vars, false);
  std::vector<bool> column(t_len);
  for (std::size_t v = 0; v < n_vars; ++v) {
    for (;;) {
      bool masked_state = unit(rng) < ratio;
      std::size_t hidden = 0;
      for (std::size_t t = 0; t < t_len; ++t) {
        column[t] = masked_state;
        hidden += masked_state ? 1 : 0;
        const double leave = masked_state ? p_end_mask : p_end_unmask;
        if (unit(rng) < leave) masked_state = !masked_state;
      }
      if (hidden < t_len) break;
    }
    for (std::size_t t = 0; t < t_len; ++t) mask[t * n_vars + v] = column[t];
  }

  MaskedSeries out;
  out.series = series;
  out.descriptor.modality = Modality::kTimeSeries;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    out.descriptor.positions.push_back(i);
    out.descriptor.originals.push_back(series.values[i]);
    out.series.values[i] = 0.0;
  }
  out.descriptor.ratio_applied = static_cast<double>(out.descriptor.positions.size()) / static_cast<double>(mask.size());
  return out;
}

const MaskDescriptor* MaskedView::descriptor(Modality m) const {
  for (const auto& d : descriptors) {
    if (d.modality == m) return &d;
  }
  return nullptr;
}

MaskedView make_masked_view(const MultimodalSample& sample, const MaskingConfig& cfg, std::uint64_t seed) {
  MaskedView view;
  view.sample = sample;
  view.sample.tabular_visibility.clear();
  view.sample.masked_patches.clear();
  auto stream = [&](Modality m) { return std::mt19937_64(derive_seed(seed, sample.id, index_of(m) + 1)); };

  if (sample.text) {
    auto rng = stream(Modality::kText);
    TextMaskConfig tc{cfg.text_ratio, cfg.vocab_size, cfg.text_mask_token_prob, cfg.text_random_token_prob};
    MaskedText mt = mask_text(*sample.text, tc, rng);
    view.sample.text = std::move(mt.tokens);
    view.descriptors.push_back(std::move(mt.descriptor));
  }
  if (sample.image) {
    auto rng = stream(Modality::kImage);
    MaskedImage mi = mask_image_patches(*sample.image, cfg.patch_size, cfg.image_ratio, rng);
    view.sample.image = std::move(mi.image);
    view.sample.masked_patches = std::move(mi.masked_patches);
    view.descriptors.push_back(std::move(mi.descriptor));
  }
  if (sample.tabular) {
    auto rng = stream(Modality::kTabular);
    MaskedTabular mt = mask_tabular(*sample.tabular, cfg.tabular_ratio, rng);
    view.sample.tabular = std::move(mt.features);
    view.sample.tabular_visibility = std::move(mt.visibility);
    view.descriptors.push_back(std::move(mt.descriptor));
  }
  if (sample.timeseries) {
    auto rng = stream(Modality::kTimeSeries);
    MaskedSeries ms =
        mask_timeseries_geometric(*sample.timeseries, cfg.timeseries_ratio, cfg.timeseries_mean_mask_len, rng);
    view.sample.timeseries = std::move(ms.series);
    view.descriptors.push_back(std::move(ms.descriptor));
  }
  return view;
}

}  // namespace lanistr
