#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lanistr/sample.hpp"

namespace lanistr {

/// Synthetic multimodal data driven by a shared Gaussian latent u. Each
/// modality observes its own signal s = rho * u + sqrt(1 - rho^2) * eps and
/// renders it with noise; the label is a fixed linear functional of u.
struct GenSpec {
  std::size_t n_samples = 20000;
  std::size_t latent_dim = 4;
  DatasetInfo shapes;  // feature_std is ignored
  ModalitySet modalities = {true, true, true, false};
  std::array<double, kNumModalities> missingness = {0.4, 0.4, 0.4, 0.4};
  double rho = 0.9;
  double noise = 1.0;  // scales every observation noise; 0 gives noiseless renders
  double text_sharpness = 2.0;
  bool labeled = true;
  std::uint64_t seed = 0;
  std::uint64_t first_id = 0;

  void validate() const;
};

struct GeneratedData {
  Dataset dataset;
  std::vector<std::vector<double>> latents;  // u per sample
};

Dataset generate(const GenSpec& spec);
GeneratedData generate_with_latents(const GenSpec& spec);

/// The label rule of the generator: class boundaries at standard-normal
/// quantiles of w . u, with w fixed by the spec seed.
int label_from_latent(const GenSpec& spec, std::span<const double> u);

/// Dataset-level tabular std over present rows, as stored in DatasetInfo.
std::vector<double> tabular_feature_std(const Dataset& data);

/// Disjoint, exhaustive, seed-deterministic split. Every part but the last gets
/// round(f * n) samples.
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed);
std::vector<Dataset> split_counts(const Dataset& data, std::span<const std::size_t> counts, std::uint64_t seed);

/// Samples that carry every modality in `modalities`.
Dataset parallel_subset(const Dataset& data, const ModalitySet& modalities);

struct ExperimentSizes {
  std::size_t pretrain = 20000;
  std::size_t finetune = 256;
  std::size_t val = 128;
  std::size_t test = 512;
};

struct ExperimentData {
  Dataset pretrain;  // unlabeled, with missing modalities
  Dataset finetune;  // labeled, parallel only
  Dataset val;
  Dataset test;
};

/// Unlabeled pretraining pool from `spec` plus labeled parallel splits drawn
/// from the same latent world with disjoint sample ids.
ExperimentData make_experiment_data(const GenSpec& spec, const ExperimentSizes& sizes);

/// Writes manifest.json, text.bin, image.bin, tabular.bin, timeseries.bin and
/// labels.csv. `spec_json` (may be empty) is echoed into the manifest.
void export_dataset(const Dataset& data, const std::string& dir, const std::string& spec_json = "");
Dataset import_dataset(const std::string& dir);

}  // namespace lanistr
