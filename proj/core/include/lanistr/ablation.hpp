#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lanistr/datagen.hpp"
#include "lanistr/metrics.hpp"
#include "lanistr/model.hpp"
#include "lanistr/pipeline.hpp"

namespace lanistr {

struct ExperimentConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain;
  FinetuneConfig finetune;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t eval_batch = 128;
};

struct AblationSwitch {
  enum class Kind { kFull, kNoPretrain, kDropModality, kZeroLambda, kExcludeNonParallel, kUnlabeledFraction };
  Kind kind = Kind::kFull;
  Modality modality = Modality::kText;
  LossTerm term = LossTerm::kSimmmm;
  double fraction = 1.0;

  static AblationSwitch full() { return {}; }
  static AblationSwitch no_pretrain() { return {Kind::kNoPretrain}; }
  static AblationSwitch drop(Modality m) { return {Kind::kDropModality, m}; }
  static AblationSwitch zero_lambda(LossTerm t) { return {Kind::kZeroLambda, Modality::kText, t}; }
  static AblationSwitch exclude_non_parallel() { return {Kind::kExcludeNonParallel}; }
  static AblationSwitch unlabeled_fraction(double f) { return {Kind::kUnlabeledFraction, Modality::kText, LossTerm::kSimmmm, f}; }

  std::string label() const;
  /// Label of the run this switch is equivalent to (fraction 1 is the full
  /// run, fraction 0 is no pretraining).
  std::string run_key() const;
};

/// Parses ';'-separated groups such as
/// "drop-modality:text,image;zero-lambda:5;exclude-non-parallel;unlabeled-fraction:0,0.5,1".
/// Also accepts "full" and "no-pretrain". Lambda indices are 1-based.
std::vector<AblationSwitch> parse_switches(std::string_view spec);

struct RunResult {
  std::uint64_t seed = 0;
  EvalMetrics test;
  std::array<bool, kNumLossTerms> terms_applicable{};
  std::size_t pretrain_samples = 0;
  std::size_t pretrain_steps = 0;
  double trainable_fraction = 0.0;
};

/// Pretrain (unless switched off), fine-tune and evaluate one configuration.
/// The seed fixes initialization, masks, dropout and data order, so runs of
/// different switches with the same seed are paired.
RunResult run_switch(const ExperimentConfig& cfg, const ExperimentData& data, const AblationSwitch& sw,
                     std::uint64_t seed);

struct AblationRow {
  AblationSwitch sw;
  std::vector<RunResult> runs;
  MeanStd accuracy;
  std::optional<MeanStd> auroc;
  std::array<bool, kNumLossTerms> terms_applicable{};
};

struct AblationTable {
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& label) const;
  /// label,accuracy_mean,accuracy_std,auroc_mean,auroc_std,mlm,mim,mfm,mtm,simmmm,seeds
  void write_csv(std::ostream& out) const;
  std::string to_text() const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every switch over every seed. A full-model row is prepended unless a
/// switch already stands for it. Identical runs are computed once. With
/// `parallel` > 1, independent runs execute on that many threads.
AblationTable ablate(const ExperimentConfig& cfg, const ExperimentData& data,
                     const std::vector<AblationSwitch>& switches, std::size_t parallel = 1,
                     const ProgressFn& progress = {});

/// Drops modalities outside `keep` from every sample and removes samples left
/// with nothing.
Dataset restrict_modalities(const Dataset& data, const ModalitySet& keep);

}  // namespace lanistr
