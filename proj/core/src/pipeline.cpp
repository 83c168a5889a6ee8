#include "lanistr/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "lanistr/metrics.hpp"

namespace lanistr {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("train config: lr must be positive");
  if (!(lr_min >= 0.0) || lr_min > lr) throw Error("train config: lr_min must lie in [0, lr]");
  adamw.validate();
  weights.validate();
}

void FinetuneConfig::validate() const {
  if (batch_size < 1) throw Error("finetune config: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("finetune config: lr must be positive");
  if (!(lr_min >= 0.0) || lr_min > lr) throw Error("finetune config: lr_min must lie in [0, lr]");
  adamw.validate();
}

bool deterministic_forced() {
  const char* v = std::getenv("LANISTR_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

std::uint64_t effective_seed(std::uint64_t seed, bool deterministic) {
  if (deterministic) return seed;
  std::random_device rd;
  return derive_seed(seed, (static_cast<std::uint64_t>(rd()) << 32) ^ rd());
}

std::string format_breakdown(const LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (LossTerm t : kAllLossTerms) {
    os << loss_term_name(t) << '=';
    if (b.applicable(t)) {
      os << *b.terms[static_cast<std::size_t>(t)];
    } else {
      os << "n/a";
    }
    os << ' ';
  }
  os << "total=" << b.total;
  return os.str();
}

NonFiniteLoss::NonFiniteLoss(std::size_t step, LossBreakdown breakdown)
    : Error("pretrain: non-finite loss at step " + std::to_string(step) + " (" + format_breakdown(breakdown) + ")"),
      step_(step),
      breakdown_(std::move(breakdown)) {}

namespace {

MaskingConfig resolve_masking(MaskingConfig m, const ModelConfig& model) {
  m.vocab_size = model.text.vocab_size;
  m.patch_size = model.image.patch_size;
  return m;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

std::vector<const MultimodalSample*> pointers(const std::vector<MaskedView>& views) {
  std::vector<const MultimodalSample*> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(&v.sample);
  return out;
}

bool all_finite(const LossBreakdown& b) {
  if (!std::isfinite(b.total)) return false;
  for (const auto& t : b.terms) {
    if (t && !std::isfinite(*t)) return false;
  }
  return true;
}

void add_unimodal_terms(const LanistrModel& model, const EncodedBatch& enc, const std::vector<MaskedView>& views,
                        const TrainConfig& cfg, std::span<const double> feature_std, LossTerms& terms) {
  for (Modality m : kAllModalities) {
    const auto mi = index_of(m);
    const LossTerm term = unimodal_term(m);
    if (cfg.weights[term] == 0.0 || !enc.outputs[mi]) continue;
    std::vector<const MaskDescriptor*> descs;
    for (std::size_t row : enc.members[mi]) descs.push_back(views[row].descriptor(m));
    const std::size_t count = masked_count(descs);
    if (count == 0) continue;
    const EncoderOutput& out = *enc.outputs[mi];
    switch (m) {
      case Modality::kText:
        terms.set(term, mlm_loss(model.mlm_logits(out), descs), count);
        break;
      case Modality::kImage:
        terms.set(term, mim_loss(model.pixel_predictions(out), descs), count);
        break;
      case Modality::kTabular:
        terms.set(term, mfm_loss(model.tabular_reconstruction(out), descs, feature_std), count);
        break;
      case Modality::kTimeSeries:
        terms.set(term, mtm_loss(model.series_predictions(out), descs), count);
        break;
    }
  }
}

}  // namespace

void check_compatible(const ModelConfig& model, const DatasetInfo& info) {
  auto mismatch = [](const char* field, std::size_t data, std::size_t expected) {
    if (data != expected) {
      throw Error(std::string("dataset ") + field + " is " + std::to_string(data) + " but the model expects " +
                  std::to_string(expected));
    }
  };
  if (model.enabled(Modality::kText)) {
    mismatch("text_length", info.text_length, model.text.max_length);
    mismatch("vocab_size", info.vocab_size, model.text.vocab_size);
  }
  if (model.enabled(Modality::kImage)) {
    mismatch("image_size", info.image_size, model.image.image_size);
    mismatch("image_channels", info.image_channels, model.image.channels);
  }
  if (model.enabled(Modality::kTabular)) mismatch("n_features", info.n_features, model.tabular.n_features);
  if (model.enabled(Modality::kTimeSeries)) {
    mismatch("series_length", info.series_length, model.timeseries.series_length);
    mismatch("n_variables", info.n_variables, model.timeseries.n_variables);
  }
  mismatch("n_classes", info.n_classes, model.n_classes);
}

TotalLoss pretraining_loss(const LanistrModel& model, std::span<const MultimodalSample* const> batch,
                           const TrainConfig& cfg, std::span<const double> feature_std, std::uint64_t step_seed,
                           const ForwardContext& ctx) {
  if (batch.empty()) throw Error("pretrain: empty batch");
  const MaskingConfig masking = resolve_masking(cfg.masking, model.config());

  std::vector<MaskedView> views;
  views.reserve(batch.size());
  for (const auto* s : batch) views.push_back(make_masked_view(*s, masking, step_seed));
  const auto masked = pointers(views);
  const EncodedBatch enc_hat = model.encode(masked, ctx);

  LossTerms terms;
  if (cfg.shared_mask_draw) {
    add_unimodal_terms(model, enc_hat, views, cfg, feature_std, terms);
  } else {
    std::vector<MaskedView> other;
    other.reserve(batch.size());
    const std::uint64_t other_seed = derive_seed(step_seed, 0x1d);
    for (const auto* s : batch) other.push_back(make_masked_view(*s, masking, other_seed));
    const auto other_ptrs = pointers(other);
    add_unimodal_terms(model, model.encode(other_ptrs, ctx), other, cfg, feature_std, terms);
  }

  if (cfg.weights[LossTerm::kSimmmm] != 0.0) {
    const EncodedBatch enc = model.encode(batch, ctx);
    const Tensor z_hat = model.fuse(enc_hat, ctx).z;
    const Tensor z = model.fuse(enc, ctx).z;
    const Tensor e_hat = model.project(z_hat);
    const Tensor e = model.project(z);
    terms.set(LossTerm::kSimmmm, simmmm_loss(z_hat, z, e_hat, e, cfg.stop_gradient), batch.size());
  }
  return total_loss(terms, cfg.weights);
}

PretrainResult pretrain(LanistrModel& model, const Dataset& data, const TrainConfig& cfg,
                        const StepCallback& on_step) {
  cfg.validate();
  if (data.samples.empty()) throw Error("pretrain: empty dataset");
  for (const auto& s : data.samples) {
    if (s.present_count() == 0) throw Error("pretrain: sample " + std::to_string(s.id) + " has no modality");
  }
  const std::uint64_t seed = effective_seed(cfg.seed, cfg.deterministic || deterministic_forced());
  const std::size_t n = data.samples.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * cfg.epochs;

  std::vector<double> feature_std = data.info.feature_std;
  if (feature_std.size() != model.config().tabular.n_features) {
    feature_std.assign(model.config().tabular.n_features, 1.0);
  }

  AdamW optimizer(cfg.adamw);
  std::mt19937_64 dropout_rng(derive_seed(seed, 0xd409));
  const ForwardContext ctx{true, &dropout_rng};
  PretrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(seed, 0x5e7, epoch));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<const MultimodalSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.samples[order[i]]);

      const double lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
      model.parameters().zero_grad();
      TotalLoss loss = pretraining_loss(model, batch, cfg, feature_std, derive_seed(seed, 0x3a5c, step), ctx);
      if (!all_finite(loss.breakdown)) throw NonFiniteLoss(step, loss.breakdown);
      backward(loss.total);
      optimizer.step(model.parameters(), lr);

      StepRecord rec{step, epoch, lr, std::move(loss.breakdown)};
      if (on_step) on_step(rec);
      result.log.push_back(std::move(rec));
      ++step;
    }
  }
  model.parameters().zero_grad();
  return result;
}

void write_metrics_csv(std::ostream& out, std::span<const StepRecord> log) {
  out << "step,epoch,lr,mlm,mim,mfm,mtm,simmmm,total\n";
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.step << ',' << r.epoch << ',' << r.lr;
    for (const auto& t : r.breakdown.terms) {
      out << ',';
      if (t) out << *t;
    }
    out << ',' << r.breakdown.total << '\n';
  }
}

void write_metrics_csv(const std::string& path, std::span<const StepRecord> log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  write_metrics_csv(f, log);
  if (!f) throw Error("failed writing " + path);
}

namespace {

/// Frozen encoder states per sample, computed once.
struct FeatureCache {
  std::array<std::vector<std::vector<double>>, kNumModalities> rows;  // [sample] -> (1+N) x d, empty if absent
  std::array<std::size_t, kNumModalities> tokens{};                   // 1 + N
  std::array<std::size_t, kNumModalities> width{};
};

FeatureCache encode_all(const LanistrModel& model, const Dataset& data, std::size_t chunk) {
  FeatureCache cache;
  for (auto& r : cache.rows) r.resize(data.samples.size());
  const ForwardContext eval{};
  for (std::size_t start = 0; start < data.samples.size(); start += chunk) {
    const std::size_t end = std::min(data.samples.size(), start + chunk);
    std::vector<const MultimodalSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.samples[i]);
    const EncodedBatch enc = model.encode(batch, eval);
    for (Modality m : kAllModalities) {
      const auto mi = index_of(m);
      if (!enc.outputs[mi]) continue;
      const Tensor& h = enc.outputs[mi]->hidden_states;
      const std::size_t per = h.dim(1) * h.dim(2);
      cache.tokens[mi] = h.dim(1);
      cache.width[mi] = h.dim(2);
      const auto values = h.data();
      for (std::size_t k = 0; k < enc.members[mi].size(); ++k) {
        const auto first = values.begin() + static_cast<std::ptrdiff_t>(k * per);
        cache.rows[mi][start + enc.members[mi][k]].assign(first, first + static_cast<std::ptrdiff_t>(per));
      }
    }
  }
  return cache;
}

EncodedBatch gather(const FeatureCache& cache, const Dataset& data, std::span<const std::size_t> indices) {
  EncodedBatch out;
  out.batch_size = indices.size();
  for (std::size_t idx : indices) out.presence.push_back(data.samples[idx].presence());
  for (Modality m : kAllModalities) {
    const auto mi = index_of(m);
    std::vector<double> values;
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto& row = cache.rows[mi][indices[r]];
      if (row.empty()) continue;
      out.members[mi].push_back(r);
      values.insert(values.end(), row.begin(), row.end());
    }
    if (out.members[mi].empty()) continue;
    out.outputs[mi] = EncoderOutput{
        m, Tensor({out.members[mi].size(), cache.tokens[mi], cache.width[mi]}, std::move(values))};
  }
  return out;
}

void check_labels(const Dataset& data, std::size_t n_classes, const char* what) {
  for (const auto& s : data.samples) {
    if (!s.label) throw Error(std::string(what) + ": sample " + std::to_string(s.id) + " has no label");
    if (*s.label < 0 || static_cast<std::size_t>(*s.label) >= n_classes) {
      throw Error(std::string(what) + ": label " + std::to_string(*s.label) + " of sample " + std::to_string(s.id) +
                  " outside [0, " + std::to_string(n_classes) + ")");
    }
  }
}

void check_modalities(const LanistrModel& model, const Dataset& data, const char* what) {
  for (const auto& s : data.samples) {
    bool any = false;
    for (Modality m : kAllModalities) any = any || (s.present(m) && model.config().enabled(m));
    if (!any) {
      throw Error(std::string(what) + ": sample " + std::to_string(s.id) + " has no modality the model encodes");
    }
  }
}

}  // namespace

FinetuneResult finetune(LanistrModel& model, const Dataset& labeled, const FinetuneConfig& cfg) {
  cfg.validate();
  if (labeled.samples.empty()) throw Error("finetune: empty dataset");
  check_labels(labeled, model.config().n_classes, "finetune");
  check_modalities(model, labeled, "finetune");

  model.freeze_unimodal_encoders(true);
  FinetuneResult result;
  result.counts = model.counts();
  if (cfg.epochs == 0) return result;

  const FeatureCache cache = encode_all(model, labeled, 64);
  const std::uint64_t seed = effective_seed(cfg.seed, cfg.deterministic || deterministic_forced());
  const std::size_t n = labeled.samples.size();
  const std::size_t total_steps = cfg.epochs * ((n + cfg.batch_size - 1) / cfg.batch_size);
  AdamW optimizer(cfg.adamw);
  std::mt19937_64 dropout_rng(derive_seed(seed, 0xf1d0));
  const ForwardContext ctx{true, &dropout_rng};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(seed, 0xf5e7, epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> targets;
      for (std::size_t i : idx) targets.push_back(*labeled.samples[i].label);

      model.parameters().zero_grad();
      const EncodedBatch enc = gather(cache, labeled, idx);
      const Tensor logits = model.classify(model.fuse(enc, ctx).z, ctx);
      const Tensor loss = cross_entropy(logits, targets);
      if (!std::isfinite(loss.item())) {
        throw Error("finetune: non-finite loss at step " + std::to_string(result.steps));
      }
      backward(loss);
      optimizer.step(model.parameters(), cosine_lr(result.steps, total_steps, cfg.lr, cfg.lr_min));
      loss_sum += loss.item();
      ++batches;
      ++result.steps;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  model.parameters().zero_grad();
  return result;
}

std::vector<double> predict_logits(const LanistrModel& model, const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw Error("predict: batch_size must be >= 1");
  check_modalities(model, data, "predict");
  const ForwardContext eval{};
  std::vector<double> logits;
  logits.reserve(data.samples.size() * model.config().n_classes);
  for (std::size_t start = 0; start < data.samples.size(); start += batch_size) {
    const std::size_t end = std::min(data.samples.size(), start + batch_size);
    std::vector<const MultimodalSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.samples[i]);
    const Tensor out = model.classify(model.fuse(model.encode(batch, eval), eval).z, eval);
    logits.insert(logits.end(), out.data().begin(), out.data().end());
  }
  return logits;
}

EvalMetrics evaluate(const LanistrModel& model, const Dataset& labeled, std::size_t batch_size) {
  if (labeled.samples.empty()) throw Error("evaluate: empty dataset");
  const std::size_t c = model.config().n_classes;
  check_labels(labeled, c, "evaluate");
  std::vector<int> labels;
  for (const auto& s : labeled.samples) labels.push_back(*s.label);
  const auto logits = predict_logits(model, labeled, batch_size);

  EvalMetrics m;
  m.n = labels.size();
  m.accuracy = accuracy(logits, c, labels);
  if (c == 2) {
    std::vector<double> scores(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) scores[i] = logits[2 * i + 1] - logits[2 * i];
    m.auroc = auroc(scores, labels);
  }
  return m;
}

}  // namespace lanistr
