#include "lanistr/objectives.hpp"

#include <cmath>

namespace lanistr {

std::string_view loss_term_name(LossTerm t) {
  switch (t) {
    case LossTerm::kMlm:
      return "mlm";
    case LossTerm::kMim:
      return "mim";
    case LossTerm::kMfm:
      return "mfm";
    case LossTerm::kMtm:
      return "mtm";
    case LossTerm::kSimmmm:
      return "simmmm";
  }
  return "unknown";
}

LossTerm unimodal_term(Modality m) {
  switch (m) {
    case Modality::kText:
      return LossTerm::kMlm;
    case Modality::kImage:
      return LossTerm::kMim;
    case Modality::kTabular:
      return LossTerm::kMfm;
    case Modality::kTimeSeries:
      return LossTerm::kMtm;
  }
  return LossTerm::kMlm;
}

void LossWeights::validate() const {
  bool any = false;
  for (double l : lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error("loss weights must be finite and non-negative");
    any = any || l > 0.0;
  }
  if (!any) throw Error("loss weights: at least one lambda must be positive");
}

void LossTerms::set(LossTerm t, Tensor value, std::size_t count) {
  terms[static_cast<std::size_t>(t)] = std::move(value);
  counts[static_cast<std::size_t>(t)] = count;
}

TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights) {
  TotalLoss out;
  Tensor total;
  for (LossTerm t : kAllLossTerms) {
    const std::size_t i = static_cast<std::size_t>(t);
    const double lambda = weights[t];
    if (!terms.terms[i] || lambda == 0.0) continue;
    const Tensor& value = *terms.terms[i];
    out.breakdown.terms[i] = value.item();
    out.breakdown.counts[i] = terms.counts[i];
    Tensor weighted = scale(value, lambda);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  if (!total.defined()) throw Error("total_loss: no applicable loss term");
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

std::size_t masked_count(std::span<const MaskDescriptor* const> descriptors) {
  std::size_t n = 0;
  for (const auto* d : descriptors) n += d ? d->positions.size() : 0;
  return n;
}

namespace {

void check_rows(const Tensor& pred, std::span<const MaskDescriptor* const> descriptors, const char* op) {
  if (pred.rank() < 2 || pred.dim(0) != descriptors.size()) {
    throw Error(std::string(op) + ": " + std::to_string(descriptors.size()) + " descriptors for predictions " +
                shape_str(pred.shape()));
  }
  if (masked_count(descriptors) == 0) throw Error(std::string(op) + ": no masked position to score");
}

}  // namespace

Tensor mlm_loss(const Tensor& logits, std::span<const MaskDescriptor* const> descriptors) {
  check_rows(logits, descriptors, "mlm_loss");
  const std::size_t len = logits.dim(1), vocab = logits.dim(2);
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (!descriptors[i]) continue;
    for (std::size_t k = 0; k < descriptors[i]->positions.size(); ++k) {
      const std::size_t pos = descriptors[i]->positions[k];
      if (pos >= len) throw Error("mlm_loss: masked position outside the sequence");
      rows.push_back(i * len + pos);
      targets.push_back(static_cast<int>(descriptors[i]->originals[k]));
    }
  }
  return cross_entropy(take_rows(reshape(logits, {descriptors.size() * len, vocab}), rows), targets);
}

Tensor mim_loss(const Tensor& predictions, std::span<const MaskDescriptor* const> descriptors) {
  check_rows(predictions, descriptors, "mim_loss");
  const std::size_t patches = predictions.dim(1), dim = predictions.dim(2);
  std::vector<std::size_t> rows;
  std::vector<double> targets;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (!descriptors[i]) continue;
    if (descriptors[i]->values_per_position != dim) throw Error("mim_loss: patch size mismatch");
    for (std::size_t pos : descriptors[i]->positions) {
      if (pos >= patches) throw Error("mim_loss: masked patch outside the image");
      rows.push_back(i * patches + pos);
    }
    targets.insert(targets.end(), descriptors[i]->originals.begin(), descriptors[i]->originals.end());
  }
  Tensor picked = take_rows(reshape(predictions, {descriptors.size() * patches, dim}), rows);
  return mean(abs(sub(picked, Tensor({rows.size(), dim}, std::move(targets)))));
}

Tensor mfm_loss(const Tensor& reconstruction, std::span<const MaskDescriptor* const> descriptors,
                std::span<const double> feature_std, std::size_t* excluded) {
  check_rows(reconstruction, descriptors, "mfm_loss");
  const std::size_t f = reconstruction.dim(1);
  if (feature_std.size() != f) throw Error("mfm_loss: feature statistics do not match the feature count");
  std::vector<std::size_t> rows;
  std::vector<double> targets, inv_std;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (!descriptors[i]) continue;
    for (std::size_t k = 0; k < descriptors[i]->positions.size(); ++k) {
      const std::size_t j = descriptors[i]->positions[k];
      if (j >= f) throw Error("mfm_loss: masked column outside the feature vector");
      if (!(feature_std[j] > 0.0)) {
        ++skipped;
        continue;
      }
      rows.push_back(i * f + j);
      targets.push_back(descriptors[i]->originals[k]);
      inv_std.push_back(1.0 / feature_std[j]);
    }
  }
  if (excluded) *excluded = skipped;
  if (rows.empty()) throw Error("mfm_loss: every masked feature has zero variance");
  const std::size_t m = rows.size();
  Tensor picked = take_rows(reshape(reconstruction, {descriptors.size() * f, 1}), rows);
  Tensor residual = mul(sub(picked, Tensor({m, 1}, std::move(targets))), Tensor({m, 1}, std::move(inv_std)));
  return mean(square(residual));
}

Tensor mtm_loss(const Tensor& predictions, std::span<const MaskDescriptor* const> descriptors) {
  check_rows(predictions, descriptors, "mtm_loss");
  const std::size_t cells = predictions.size() / descriptors.size();
  std::vector<std::size_t> rows;
  std::vector<double> targets;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (!descriptors[i]) continue;
    for (std::size_t k = 0; k < descriptors[i]->positions.size(); ++k) {
      const std::size_t pos = descriptors[i]->positions[k];
      if (pos >= cells) throw Error("mtm_loss: masked cell outside the series");
      rows.push_back(i * cells + pos);
      targets.push_back(descriptors[i]->originals[k]);
    }
  }
  const std::size_t m = rows.size();
  Tensor picked = take_rows(reshape(predictions, {predictions.size(), 1}), rows);
  return mean(square(sub(picked, Tensor({m, 1}, std::move(targets)))));
}

Tensor negative_cosine(const Tensor& e, const Tensor& z) { return neg(cosine_similarity(e, z)); }

Tensor simmmm_loss(const Tensor& z1, const Tensor& z2, const Tensor& e1, const Tensor& e2, bool stop_gradient) {
  if (z1.shape() != z2.shape() || e1.shape() != z1.shape() || e2.shape() != z1.shape()) {
    throw Error("simmmm_loss: embedding shapes differ");
  }
  const Tensor t2 = stop_gradient ? lanistr::stop_gradient(z2) : z2;
  const Tensor t1 = stop_gradient ? lanistr::stop_gradient(z1) : z1;
  Tensor per_row = add(negative_cosine(e1, t2), negative_cosine(e2, t1));
  return per_row.rank() == 0 ? per_row : mean(per_row);
}

}  // namespace lanistr
