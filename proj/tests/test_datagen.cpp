#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "lanistr/datagen.hpp"
#include "lanistr/tensor.hpp"

using namespace lanistr;
namespace fs = std::filesystem;

namespace {

GenSpec spec_of(std::size_t n, std::uint64_t seed) {
  GenSpec s;
  s.n_samples = n;
  s.seed = seed;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lanistr_datagen_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << bytes;
}

const char* kFiles[] = {"manifest.json", "text.bin", "image.bin", "tabular.bin", "timeseries.bin", "labels.csv"};

}  // namespace

TEST(Generate, ShapesAndRanges) {
  GenSpec s = spec_of(200, 1);
  s.modalities = {true, true, true, true};
  const Dataset d = generate(s);
  ASSERT_EQ(d.samples.size(), 200u);
  for (const auto& x : d.samples) {
    EXPECT_GT(x.present_count(), 0u);
    if (x.text) {
      ASSERT_EQ(x.text->size(), d.info.text_length);
      for (int t : *x.text) {
        EXPECT_GE(t, SpecialTokens::kFirstContent);
        EXPECT_LT(t, static_cast<int>(d.info.vocab_size));
      }
    }
    if (x.image) EXPECT_EQ(x.image->pixels.size(), 16u * 16u * 1u);
    if (x.tabular) EXPECT_EQ(x.tabular->size(), 8u);
    if (x.timeseries) EXPECT_EQ(x.timeseries->values.size(), 12u * 4u);
    ASSERT_TRUE(x.label.has_value());
    EXPECT_TRUE(*x.label == 0 || *x.label == 1);
  }
  EXPECT_EQ(d.info.feature_std.size(), 8u);
}

TEST(Generate, SeedDeterministic) {
  EXPECT_EQ(generate(spec_of(50, 3)), generate(spec_of(50, 3)));
  EXPECT_NE(generate(spec_of(50, 3)), generate(spec_of(50, 4)));
}

TEST(Generate, MissingnessNearRequestedRate) {
  const Dataset d = generate(spec_of(20000, 5));
  for (Modality m : {Modality::kText, Modality::kImage, Modality::kTabular}) {
    std::size_t absent = 0;
    for (const auto& x : d.samples) absent += !x.present(m);
    const double rate = static_cast<double>(absent) / 20000.0;
    EXPECT_GE(rate, 0.37) << modality_name(m);
    EXPECT_LE(rate, 0.43) << modality_name(m);
  }
  for (const auto& x : d.samples) EXPECT_FALSE(x.present(Modality::kTimeSeries));
}

TEST(Generate, LabelsFollowLatentRuleAndAreBalanced) {
  const GenSpec s = spec_of(4000, 6);
  const GeneratedData g = generate_with_latents(s);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < g.dataset.samples.size(); ++i) {
    EXPECT_EQ(*g.dataset.samples[i].label, label_from_latent(s, g.latents[i]));
    ones += *g.dataset.samples[i].label == 1;
  }
  EXPECT_GT(ones, 1800u);
  EXPECT_LT(ones, 2200u);
}

TEST(Generate, RejectsBadSpecs) {
  GenSpec s = spec_of(10, 1);
  s.missingness[0] = 1.0;
  EXPECT_THROW(generate(s), Error);
  s = spec_of(0, 1);
  EXPECT_THROW(generate(s), Error);
  s = spec_of(10, 1);
  s.modalities = {false, false, false, false};
  EXPECT_THROW(generate(s), Error);
  s = spec_of(10, 1);
  s.rho = 1.5;
  EXPECT_THROW(generate(s), Error);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  const Dataset d = generate(spec_of(101, 7));
  const std::vector<double> f = {0.5, 0.3, 0.2};
  const auto parts = split(d, f, 9);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].samples.size(), 51u);
  EXPECT_EQ(parts[1].samples.size(), 30u);
  EXPECT_EQ(parts[2].samples.size(), 20u);
  std::set<std::uint64_t> ids;
  for (const auto& p : parts) {
    for (const auto& s : p.samples) EXPECT_TRUE(ids.insert(s.id).second);
  }
  EXPECT_EQ(ids.size(), 101u);
  EXPECT_EQ(split(d, f, 9), parts);
  EXPECT_THROW(split(d, std::vector<double>{0.5, 0.4}, 9), Error);
}

TEST(ExperimentData, DisjointIdsAndParallelLabeledSplits) {
  const ExperimentData e = make_experiment_data(spec_of(300, 8), {300, 40, 20, 30});
  std::set<std::uint64_t> ids;
  for (const Dataset* d : {&e.pretrain, &e.finetune, &e.val, &e.test}) {
    for (const auto& s : d->samples) EXPECT_TRUE(ids.insert(s.id).second);
  }
  EXPECT_EQ(e.pretrain.samples.size(), 300u);
  EXPECT_EQ(e.finetune.samples.size(), 40u);
  for (const Dataset* d : {&e.finetune, &e.val, &e.test}) {
    for (const auto& s : d->samples) {
      EXPECT_TRUE(s.label.has_value());
      EXPECT_EQ(s.present_count(), 3u);
    }
  }
}

TEST(ParallelSubset, KeepsOnlyComplete) {
  const Dataset d = generate(spec_of(500, 10));
  const Dataset p = parallel_subset(d, {true, true, true, false});
  EXPECT_GT(p.samples.size(), 0u);
  EXPECT_LT(p.samples.size(), d.samples.size());
  for (const auto& s : p.samples) EXPECT_EQ(s.present_count(), 3u);
}

TEST(Export, RoundTripIsByteExact) {
  GenSpec s = spec_of(60, 11);
  s.modalities = {true, true, true, true};
  s.labeled = false;
  Dataset d = generate(s);
  d.samples[3].label = 1;
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  export_dataset(d, a.string(), R"({"seed":11})");
  const Dataset back = import_dataset(a.string());
  EXPECT_EQ(back, d);
  export_dataset(back, b.string(), R"({"seed":11})");
  for (const char* f : kFiles) EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Import, ReportsCorruption) {
  const Dataset d = generate(spec_of(20, 12));
  const fs::path dir = scratch_dir("bad");
  export_dataset(d, dir.string());

  EXPECT_THROW(import_dataset((dir / "missing").string()), Error);

  const std::string tab = read_file(dir / "tabular.bin");
  write_file(dir / "tabular.bin", tab.substr(0, tab.size() - 8));
  try {
    import_dataset(dir.string());
    FAIL() << "expected a throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("tabular.bin"), std::string::npos) << e.what();
  }
  write_file(dir / "tabular.bin", tab);

  const std::string labels = read_file(dir / "labels.csv");
  write_file(dir / "labels.csv", "id;label\n");
  try {
    import_dataset(dir.string());
    FAIL() << "expected a throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("labels.csv"), std::string::npos) << e.what();
  }
  write_file(dir / "labels.csv", labels);

  write_file(dir / "manifest.json", "{ not json");
  EXPECT_THROW(import_dataset(dir.string()), Error);
  fs::remove_all(dir);
}

TEST(FeatureStd, MatchesPopulationStd) {
  const Dataset d = generate(spec_of(300, 13));
  const auto sd = tabular_feature_std(d);
  for (std::size_t j = 0; j < 8; ++j) {
    double n = 0, s = 0, s2 = 0;
    for (const auto& x : d.samples) {
      if (!x.tabular) continue;
      n += 1;
      s += (*x.tabular)[j];
    }
    const double mean = s / n;
    for (const auto& x : d.samples) {
      if (x.tabular) s2 += ((*x.tabular)[j] - mean) * ((*x.tabular)[j] - mean);
    }
    EXPECT_NEAR(sd[j], std::sqrt(s2 / n), 1e-9);
  }
}
