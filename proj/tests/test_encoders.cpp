#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lanistr/encoders.hpp"
#include "lanistr/masking.hpp"
#include "oracles.hpp"

using namespace lanistr;
using lanistr::testing::weighted_sum;

namespace {

TransformerConfig small_transformer() { return {64, 4, 2, 128, 0.1}; }

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

TextBatch random_text(std::size_t n, std::size_t len, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(SpecialTokens::kFirstContent, 63);
  TextBatch b{n, len, std::vector<int>(n * len)};
  for (int& id : b.ids) id = d(rng);
  return b;
}

ImageBatch random_image(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  ImageBatch b{n, std::vector<double>(n * 256), {}};
  for (double& p : b.pixels) p = d(rng);
  return b;
}

SeriesBatch random_series(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  SeriesBatch b{n, std::vector<double>(n * 48)};
  for (double& v : b.values) v = d(rng);
  return b;
}

TabularBatch random_tabular(std::size_t n, std::size_t f, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  TabularBatch b{n, std::vector<double>(n * f), std::vector<double>(n * f, 1.0)};
  for (double& v : b.values) v = d(rng);
  return b;
}

// Every parameter in the store has a nonzero gradient after one backward.
void expect_all_parameters_reached(ParameterStore& store, const Tensor& hidden) {
  store.zero_grad();
  backward(weighted_sum(hidden, 99));
  for (const auto& p : store.params()) {
    double norm = 0.0;
    if (p.tensor.has_grad()) {
      for (double g : p.tensor.grad()) norm += g * g;
    }
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

}  // namespace

TEST(TextEncoder, ShapeDeterminismAndPositions) {
  ParameterStore store(1);
  TextEncoder enc(store, "text", {small_transformer(), 64, 16});
  std::mt19937_64 rng(2);
  const TextBatch b = random_text(1, 16, rng);
  const EncoderOutput out = enc(b, {});
  EXPECT_EQ(out.hidden_states.shape(), (Shape{1, 17, 64}));
  EXPECT_EQ(values(out.hidden_states), values(enc(b, {}).hidden_states));

  TextBatch permuted = b;
  std::shuffle(permuted.ids.begin(), permuted.ids.end(), rng);
  ASSERT_NE(permuted.ids, b.ids);
  EXPECT_GT(max_abs_diff(enc(permuted, {}).hidden_states, out.hidden_states), 1e-6);
}

TEST(TextEncoder, RejectsBadIdsAndLength) {
  ParameterStore store(1);
  TextEncoder enc(store, "text", {small_transformer(), 64, 16});
  std::mt19937_64 rng(3);
  TextBatch b = random_text(1, 16, rng);
  b.ids[3] = 64;
  EXPECT_THROW(enc(b, {}), Error);
  EXPECT_THROW(enc(random_text(1, 17, rng), {}), Error);
}

TEST(ImageEncoder, ShapeAndSensitivity) {
  ParameterStore store(4);
  ImageEncoder enc(store, "image", {small_transformer(), 16, 1, 4});
  ImageBatch zeros{1, std::vector<double>(256, 0.0), {}};
  ImageBatch ones{1, std::vector<double>(256, 1.0), {}};
  const EncoderOutput out = enc(zeros, {});
  EXPECT_EQ(out.hidden_states.shape(), (Shape{1, 17, 64}));
  EXPECT_GT(max_abs_diff(out.hidden_states, enc(ones, {}).hidden_states), 1e-6);

  ImageBatch masked = ones;
  masked.masked_patches.assign(16, false);
  masked.masked_patches[5] = true;
  const EncoderOutput m = enc(masked, {});
  EXPECT_EQ(m.tokens(), 16u);
  EXPECT_GT(max_abs_diff(m.hidden_states, enc(ones, {}).hidden_states), 1e-6);
}

TEST(ImageEncoder, RejectsNonDivisibleImage) {
  ParameterStore store(5);
  EXPECT_THROW(ImageEncoder(store, "image", {small_transformer(), 15, 1, 4}), Error);
}

TEST(TabularEncoder, ShapeAndMasksOnSimplex) {
  ParameterStore store(6);
  TabularEncoder enc(store, "tab", {8, 64, 16, 3, 1.3});
  std::mt19937_64 rng(7);
  const TabularEncoderOutput out = enc.forward(random_tabular(5, 8, rng), {});
  EXPECT_EQ(out.output.hidden_states.shape(), (Shape{5, 4, 64}));
  ASSERT_EQ(out.step_masks.size(), 3u);
  for (const Tensor& mask : out.step_masks) {
    ASSERT_EQ(mask.shape(), (Shape{5, 16}));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 16; ++c) {
        EXPECT_GE(mask.at(r * 16 + c), 0.0);
        s += mask.at(r * 16 + c);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  EXPECT_THROW(enc(random_tabular(2, 7, rng), {}), Error);
}

TEST(TabularEncoder, PriorDiscouragesReuse) {
  // Zero attentive weights and a bias dominated by feature 0 make step 1
  // select feature 0 alone; with gamma 1 its prior drops to zero for step 2.
  ParameterStore store(8);
  TabularEncoder enc(store, "tab", {4, 8, 4, 2, 1.0});
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string name = "tab.step" + std::to_string(s) + ".attentive";
    auto w = store.find(name + ".weight")->tensor.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = store.find(name + ".bias")->tensor.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
    b[0] = 5.0;
  }
  TabularBatch batch{1, {3.0, 0.1, -0.2, 0.3}, {1, 1, 1, 1}};
  const TabularEncoderOutput out = enc.forward(batch, {});
  const Tensor& step1 = out.step_masks[0];
  const Tensor& step2 = out.step_masks[1];
  EXPECT_EQ(std::max_element(step1.data().begin(), step1.data().end()) - step1.data().begin(), 0);
  EXPECT_LT(step2.at(0), step1.at(0));
}

TEST(TimeSeriesEncoder, ShapeOrderAndMaskedValues) {
  ParameterStore store(9);
  TimeSeriesEncoder enc(store, "ts", {small_transformer(), 12, 4});
  std::mt19937_64 rng(10);
  const SeriesBatch b = random_series(1, rng);
  const EncoderOutput out = enc(b, {});
  EXPECT_EQ(out.hidden_states.shape(), (Shape{1, 13, 64}));

  SeriesBatch reversed = b;
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t v = 0; v < 4; ++v) reversed.values[t * 4 + v] = b.values[(11 - t) * 4 + v];
  }
  EXPECT_GT(max_abs_diff(enc(reversed, {}).hidden_states, out.hidden_states), 1e-6);

  // Two series that differ only at a cell the mask zeroes encode identically.
  SeriesBatch x = b, y = b;
  y.values[17] += 5.0;
  x.values[17] = 0.0;
  y.values[17] = 0.0;
  EXPECT_EQ(values(enc(x, {}).hidden_states), values(enc(y, {}).hidden_states));
  EXPECT_THROW(enc(SeriesBatch{1, std::vector<double>(44)}, {}), Error);
}

TEST(Encoders, FiniteOnExtremeInputs) {
  ParameterStore store(11);
  ImageEncoder image(store, "image", {small_transformer(), 16, 1, 4});
  TabularEncoder tab(store, "tab", {8, 64, 16, 3, 1.3});
  TimeSeriesEncoder ts(store, "ts", {small_transformer(), 12, 4});
  for (double v : {0.0, 1.0, 1e3, -1e3}) {
    EXPECT_TRUE(all_finite(image(ImageBatch{2, std::vector<double>(512, v), {}}, {}).hidden_states)) << v;
    EXPECT_TRUE(all_finite(tab(TabularBatch{2, std::vector<double>(16, v), std::vector<double>(16, 1.0)}, {})
                               .hidden_states))
        << v;
    EXPECT_TRUE(all_finite(ts(SeriesBatch{2, std::vector<double>(96, v)}, {}).hidden_states)) << v;
  }
}

TEST(Encoders, RandomizedShapes) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t heads = 1 + rng() % 3, d = heads * (4 + rng() % 4), layers = 1 + rng() % 2;
    const TransformerConfig t{d, heads, layers, 2 * d, 0.0};
    const std::size_t len = 2 + rng() % 6, n = 1 + rng() % 3;
    ParameterStore store(rng());
    TextEncoder text(store, "text", {t, 64, len});
    EXPECT_EQ(text(random_text(n, len, rng), {}).hidden_states.shape(), (Shape{n, len + 1, d}));
    const std::size_t steps = 1 + rng() % 4, f = 2 + rng() % 6;
    TabularEncoder tab(store, "tab", {f, d, 4, steps, 1.3});
    EXPECT_EQ(tab(random_tabular(n, f, rng), {}).hidden_states.shape(), (Shape{n, steps + 1, d}));
    TimeSeriesEncoder ts(store, "ts", {t, 12, 4});
    EXPECT_EQ(ts(random_series(n, rng), {}).hidden_states.shape(), (Shape{n, 13, d}));
  }
}

TEST(Encoders, NoDeadParametersAtInit) {
  std::mt19937_64 rng(13);
  {
    ParameterStore store(14);
    TextEncoder enc(store, "text", {small_transformer(), 64, 16});
    expect_all_parameters_reached(store, enc(random_text(4, 16, rng), {}).hidden_states);
  }
  {
    ParameterStore store(15);
    ImageEncoder enc(store, "image", {small_transformer(), 16, 1, 4});
    ImageBatch b = random_image(4, rng);
    b.masked_patches.assign(64, false);
    for (std::size_t i = 0; i < 64; i += 3) b.masked_patches[i] = true;
    expect_all_parameters_reached(store, enc(b, {}).hidden_states);
  }
  {
    ParameterStore store(16);
    TabularEncoder enc(store, "tab", {8, 64, 16, 3, 1.3});
    expect_all_parameters_reached(store, enc(random_tabular(16, 8, rng), {}).hidden_states);
  }
  {
    ParameterStore store(17);
    TimeSeriesEncoder enc(store, "ts", {small_transformer(), 12, 4});
    expect_all_parameters_reached(store, enc(random_series(4, rng), {}).hidden_states);
  }
}

TEST(Encoders, DropoutOnlyInTraining) {
  ParameterStore store(18);
  TextEncoder enc(store, "text", {small_transformer(), 64, 16});
  std::mt19937_64 rng(19);
  const TextBatch b = random_text(2, 16, rng);
  std::mt19937_64 drop(20);
  const ForwardContext train{true, &drop};
  EXPECT_GT(max_abs_diff(enc(b, train).hidden_states, enc(b, {}).hidden_states), 1e-6);
}

TEST(Patchify, MatchesMaskerPatchOrder) {
  std::vector<double> pixels(2 * 8 * 8);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<double>(i);
  const auto patches = patchify(pixels, 2, 8, 1, 4);
  ImagePayload second{8, 8, 1, std::vector<double>(pixels.begin() + 64, pixels.end())};
  for (std::size_t p = 0; p < 4; ++p) {
    const auto want = extract_patch(second, 4, p);
    const std::vector<double> got(patches.begin() + static_cast<long>((4 + p) * 16),
                                  patches.begin() + static_cast<long>((5 + p) * 16));
    EXPECT_EQ(got, want);
  }
}
