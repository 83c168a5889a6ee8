#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lanistr/ablation.hpp"
#include "lanistr/datagen.hpp"
#include "lanistr/model.hpp"
#include "lanistr/pipeline.hpp"

namespace lanistr {

struct RunPaths {
  std::string dataset;     // directory written by `generate`, read by the other commands
  std::string checkpoint;  // input checkpoint for finetune / evaluate
  std::string output;      // run directory: config echo, metrics, checkpoint
};

/// One JSON document per run. Unknown keys are rejected everywhere.
struct RunConfig {
  std::uint64_t seed = 0;
  GenSpec generator;
  ExperimentSizes splits;
  std::string preset = "desk";
  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain;
  FinetuneConfig finetune;
  std::string eval_split = "test";
  std::vector<std::uint64_t> ablation_seeds = {0, 1, 2};
  std::string ablation_switches;
  std::size_t ablation_parallel = 1;
  RunPaths paths;

  /// Copies the shared seed, the generated modalities and the dataset shapes
  /// into the sections that use them.
  void resolve();
  ExperimentConfig experiment() const;
};

/// Presets: "desk", "paper" (alias of "paper-mimic"), "paper-mimic", "paper-amazon".
ModelConfig model_preset(const std::string& name);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
/// Fully resolved config; parsing it back yields the same run.
std::string to_json(const RunConfig& cfg);

std::string to_json(const GenSpec& spec);
std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace lanistr
