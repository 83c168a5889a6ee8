#include "lanistr/fusion.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace lanistr {

namespace {
constexpr double kEmbeddingStd = 0.02;

std::uint32_t pattern_bits(const ModalitySet& s) {
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < kNumModalities; ++i) bits |= (s[i] ? 1u : 0u) << i;
  return bits;
}
}  // namespace

FusionEncoder::FusionEncoder(ParameterStore& store, const std::string& name, const FusionConfig& cfg,
                             const ModalitySet& enabled, const std::array<std::size_t, kNumModalities>& input_widths,
                             std::size_t max_segment_tokens)
    : cfg_(cfg), enabled_(enabled), max_segment_tokens_(max_segment_tokens) {
  cfg.transformer.validate(name);
  const std::size_t d = cfg.transformer.d_model;
  for (Modality m : kAllModalities) {
    const std::size_t i = index_of(m);
    if (!enabled[i]) continue;
    const std::string mod = std::string(modality_name(m));
    projections_[i] = Linear(store, name + ".projection." + mod, input_widths[i], d);
    absent_tokens_[i] = store.create(name + ".absent_token." + mod, {d}, Init::normal(kEmbeddingStd));
  }
  cls_ = store.create(name + ".cls", {d}, Init::normal(kEmbeddingStd));
  segment_embedding_ = store.create(name + ".segment_embedding", {1 + kNumModalities, d}, Init::normal(kEmbeddingStd));
  position_embedding_ = store.create(name + ".position_embedding", {max_segment_tokens, d}, Init::normal(kEmbeddingStd));
  stack_ = TransformerStack(store, name + ".stack", cfg.transformer);
}

FusedSequence FusionEncoder::project_and_concat(const EncodedBatch& batch, const std::vector<std::size_t>& rows) const {
  if (rows.empty()) throw Error("fusion: empty row group");
  const std::size_t d = width(), g = rows.size();
  FusedSequence seq;
  seq.rows = rows;
  const ModalitySet& pattern = batch.presence.at(rows.front());
  for (std::size_t i = 0; i < kNumModalities; ++i) seq.presence[i] = pattern[i] && enabled_[i];
  if (std::none_of(seq.presence.begin(), seq.presence.end(), [](bool b) { return b; })) {
    throw Error("fusion: sample at batch row " + std::to_string(rows.front()) + " has no present modality");
  }
  for (std::size_t r : rows) {
    for (std::size_t i = 0; i < kNumModalities; ++i) {
      if ((batch.presence.at(r)[i] && enabled_[i]) != seq.presence[i]) {
        throw Error("fusion: rows of one group must share a presence pattern");
      }
    }
  }

  auto segment = [&](int id) { return reshape(slice(segment_embedding_, 0, static_cast<std::size_t>(id), 1), {d}); };
  const std::vector<std::size_t> zeros(g, 0);
  std::vector<Tensor> parts;
  Tensor cls_rows = reshape(take_rows(reshape(cls_, {1, d}), zeros), {g, 1, d});
  parts.push_back(add(cls_rows, segment(kClsSegment)));
  seq.segment_ids.push_back(kClsSegment);

  for (Modality m : kAllModalities) {
    const std::size_t i = index_of(m);
    if (!enabled_[i]) continue;
    if (seq.presence[i]) {
      const auto& out = batch.outputs[i];
      if (!out) throw Error("fusion: modality " + std::string(modality_name(m)) + " marked present but not encoded");
      const auto& members = batch.members[i];
      std::vector<std::size_t> picks;
      for (std::size_t r : rows) {
        auto it = std::find(members.begin(), members.end(), r);
        if (it == members.end()) throw Error("fusion: batch row missing from encoder output");
        picks.push_back(static_cast<std::size_t>(it - members.begin()));
      }
      const std::size_t len = out->hidden_states.dim(1);
      if (len > max_segment_tokens_) throw Error("fusion: modality sequence longer than the position table");
      Tensor states = take_rows(out->hidden_states, picks);
      Tensor projected = projections_[i](states);
      projected = add(add(projected, segment(segment_of(m))), slice(position_embedding_, 0, 0, len));
      parts.push_back(projected);
      seq.segment_ids.insert(seq.segment_ids.end(), len, segment_of(m));
    } else {
      Tensor absent = reshape(take_rows(reshape(absent_tokens_[i], {1, d}), zeros), {g, 1, d});
      absent = add(add(absent, segment(segment_of(m))), reshape(slice(position_embedding_, 0, 0, 1), {d}));
      parts.push_back(absent);
      seq.segment_ids.push_back(segment_of(m));
    }
  }
  seq.tokens = concat(parts, 1);
  return seq;
}

FusionOutput FusionEncoder::operator()(const EncodedBatch& batch, const ForwardContext& ctx) const {
  if (batch.batch_size == 0 || batch.presence.size() != batch.batch_size) throw Error("fusion: empty batch");
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < batch.batch_size; ++r) {
    ModalitySet eff{};
    for (std::size_t i = 0; i < kNumModalities; ++i) eff[i] = batch.presence[r][i] && enabled_[i];
    groups[pattern_bits(eff)].push_back(r);
  }
  FusionOutput out;
  std::vector<Tensor> cls_states;
  std::vector<std::size_t> order;
  const std::size_t d = width();
  for (auto& [bits, rows] : groups) {
    FusedSequence seq = project_and_concat(batch, rows);
    Tensor states = stack_(ctx.dropout(seq.tokens, cfg_.transformer.dropout), ctx);
    cls_states.push_back(reshape(slice(states, 1, 0, 1), {rows.size(), d}));
    order.insert(order.end(), rows.begin(), rows.end());
    out.groups.push_back(std::move(seq));
    out.group_states.push_back(states);
  }
  Tensor stacked = cls_states.size() == 1 ? cls_states.front() : concat(cls_states, 0);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = k;
  bool identity = true;
  for (std::size_t k = 0; k < inverse.size(); ++k) identity = identity && inverse[k] == k;
  out.z = identity ? stacked : take_rows(stacked, inverse);
  return out;
}

Projector::Projector(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden)
    : in_(store, name + ".in", width, hidden), out_(store, name + ".out", hidden, width),
      norm_(store, name + ".norm", hidden) {}

Tensor Projector::operator()(const Tensor& z) const { return out_(gelu(norm_(in_(z)))); }

}  // namespace lanistr
