#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lanistr/masking.hpp"
#include "lanistr/tensor.hpp"

namespace lanistr {

enum class LossTerm : std::size_t { kMlm = 0, kMim = 1, kMfm = 2, kMtm = 3, kSimmmm = 4 };
inline constexpr std::size_t kNumLossTerms = 5;
inline constexpr std::array<LossTerm, kNumLossTerms> kAllLossTerms = {LossTerm::kMlm, LossTerm::kMim, LossTerm::kMfm,
                                                                     LossTerm::kMtm, LossTerm::kSimmmm};

std::string_view loss_term_name(LossTerm t);
/// The unimodal term fed by a modality.
LossTerm unimodal_term(Modality m);

struct LossWeights {
  std::array<double, kNumLossTerms> lambda = {1.0, 1.0, 0.0, 0.1, 0.5};

  double operator[](LossTerm t) const { return lambda[static_cast<std::size_t>(t)]; }
  double& operator[](LossTerm t) { return lambda[static_cast<std::size_t>(t)]; }
  void validate() const;

  static LossWeights mimic() { return {{1.0, 1.0, 0.0, 0.1, 0.5}}; }
  static LossWeights amazon() { return {{1.0, 1.0, 0.01, 0.0, 0.5}}; }
};

/// Differentiable terms of one step; absent entries are not applicable.
struct LossTerms {
  std::array<std::optional<Tensor>, kNumLossTerms> terms;
  std::array<std::size_t, kNumLossTerms> counts{};

  void set(LossTerm t, Tensor value, std::size_t count);
};

struct LossBreakdown {
  std::array<std::optional<double>, kNumLossTerms> terms;
  std::array<std::size_t, kNumLossTerms> counts{};
  double total = 0.0;

  bool applicable(LossTerm t) const { return terms[static_cast<std::size_t>(t)].has_value(); }
};

struct TotalLoss {
  Tensor total;
  LossBreakdown breakdown;
};

/// λ-weighted sum over applicable terms. Terms with λ = 0 are reported as not
/// applicable and stay out of the graph. Finiteness is left to the caller.
TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights);

// Masked reconstruction losses. `descriptors[i]` belongs to batch row i of the
// prediction tensor; rows may have empty descriptors but the batch may not.

/// logits [n, L, V]; mean cross-entropy over masked tokens.
Tensor mlm_loss(const Tensor& logits, std::span<const MaskDescriptor* const> descriptors);

/// predictions [n, patches, patch_dim]; mean absolute error over masked patch pixels.
Tensor mim_loss(const Tensor& predictions, std::span<const MaskDescriptor* const> descriptors);

/// reconstruction [n, F]; mean of squared residuals over masked cells, each
/// residual divided by its feature's std. Features with zero std are skipped
/// and counted in `excluded`.
Tensor mfm_loss(const Tensor& reconstruction, std::span<const MaskDescriptor* const> descriptors,
                std::span<const double> feature_std, std::size_t* excluded = nullptr);

/// predictions [n, T, V]; mean squared error over masked cells.
Tensor mtm_loss(const Tensor& predictions, std::span<const MaskDescriptor* const> descriptors);

/// Negative cosine similarity -cos(e, z), row-wise.
Tensor negative_cosine(const Tensor& e, const Tensor& z);

/// Batch mean of D(e1, sg(z2)) + D(e2, sg(z1)). With `stop_gradient` false the
/// targets stay attached, which is only useful for studying collapse.
Tensor simmmm_loss(const Tensor& z1, const Tensor& z2, const Tensor& e1, const Tensor& e2, bool stop_gradient = true);

std::size_t masked_count(std::span<const MaskDescriptor* const> descriptors);

}  // namespace lanistr
