#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lanistr/masking.hpp"
#include "lanistr/model.hpp"
#include "lanistr/objectives.hpp"
#include "lanistr/optimizer.hpp"

namespace lanistr {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lr_min = 0.0;
  AdamWConfig adamw;
  // The desk data carries text, image and tabular, like the retail setup.
  LossWeights weights = LossWeights::amazon();
  MaskingConfig masking;
  std::uint64_t seed = 0;
  // One masked view per sample and step feeds both the unimodal losses and
  // SimMMM; when false the unimodal losses get a second, independent draw.
  bool shared_mask_draw = true;
  bool deterministic = true;
  bool stop_gradient = true;

  void validate() const;
};

/// True when LANISTR_DETERMINISTIC=1 is set in the environment.
bool deterministic_forced();
/// The seed a run actually uses: `seed` itself in deterministic mode, else
/// mixed with a nondeterministic draw.
std::uint64_t effective_seed(std::uint64_t seed, bool deterministic);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown breakdown;
};

/// Raised when a pretraining step produces a non-finite loss.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::size_t step, LossBreakdown breakdown);
  std::size_t step() const { return step_; }
  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  std::size_t step_;
  LossBreakdown breakdown_;
};

std::string format_breakdown(const LossBreakdown& b);

/// Throws when a dataset's payload shapes do not fit the model's enabled
/// encoders, naming the first mismatch.
void check_compatible(const ModelConfig& model, const DatasetInfo& info);

/// Forward pass of one pretraining batch: masked views, unimodal losses on
/// present modalities and SimMMM between each sample and its masked view.
TotalLoss pretraining_loss(const LanistrModel& model, std::span<const MultimodalSample* const> batch,
                           const TrainConfig& cfg, std::span<const double> feature_std, std::uint64_t step_seed,
                           const ForwardContext& ctx);

struct PretrainResult {
  std::vector<StepRecord> log;
};

using StepCallback = std::function<void(const StepRecord&)>;

PretrainResult pretrain(LanistrModel& model, const Dataset& data, const TrainConfig& cfg,
                        const StepCallback& on_step = {});

/// `step,epoch,lr,mlm,mim,mfm,mtm,simmmm,total`; not-applicable terms are empty.
void write_metrics_csv(std::ostream& out, std::span<const StepRecord> log);
void write_metrics_csv(const std::string& path, std::span<const StepRecord> log);

struct FinetuneConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lr_min = 0.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
};

struct FinetuneResult {
  ParameterCounts counts;
  std::size_t steps = 0;
  std::vector<double> epoch_loss;

  double trainable_fraction() const { return counts.trainable_fraction(); }
};

/// Freezes the unimodal encoders and trains fusion, projections and the
/// classifier with cross-entropy. Frozen encoder outputs are computed once in
/// evaluation mode and reused across epochs.
FinetuneResult finetune(LanistrModel& model, const Dataset& labeled, const FinetuneConfig& cfg);

struct EvalMetrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::optional<double> auroc;  // binary tasks only
};

/// Class logits [n, n_classes] in evaluation mode.
std::vector<double> predict_logits(const LanistrModel& model, const Dataset& data, std::size_t batch_size = 64);

EvalMetrics evaluate(const LanistrModel& model, const Dataset& labeled, std::size_t batch_size = 64);

}  // namespace lanistr
