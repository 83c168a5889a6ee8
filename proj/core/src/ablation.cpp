#include "lanistr/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace lanistr {

namespace {

std::string fraction_str(double f) {
  std::ostringstream os;
  os << f * 100.0 << '%';
  return os.str();
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto end = pos == std::string_view::npos ? s.size() : pos;
    std::string part(s.substr(start, end - start));
    const auto b = part.find_first_not_of(" \t");
    const auto e = part.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : part.substr(b, e - b + 1));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string AblationSwitch::label() const {
  switch (kind) {
    case Kind::kFull:
      return "full";
    case Kind::kNoPretrain:
      return "no-pretrain";
    case Kind::kDropModality:
      return "w/o " + std::string(modality_name(modality));
    case Kind::kZeroLambda:
      return "w/o " + std::string(loss_term_name(term));
    case Kind::kExcludeNonParallel:
      return "w/o non-parallel";
    case Kind::kUnlabeledFraction:
      return "unlabeled " + fraction_str(fraction);
  }
  return "?";
}

std::string AblationSwitch::run_key() const {
  if (kind == Kind::kUnlabeledFraction && fraction >= 1.0) return "full";
  if (kind == Kind::kUnlabeledFraction && fraction <= 0.0) return "no-pretrain";
  return label();
}

std::vector<AblationSwitch> parse_switches(std::string_view spec) {
  std::vector<AblationSwitch> out;
  for (const auto& group : split_on(spec, ';')) {
    if (group.empty()) continue;
    const auto colon = group.find(':');
    const std::string name = group.substr(0, colon);
    const std::vector<std::string> args =
        colon == std::string::npos ? std::vector<std::string>{} : split_on(std::string_view(group).substr(colon + 1), ',');
    auto need_args = [&] {
      if (args.empty() || std::any_of(args.begin(), args.end(), [](const std::string& a) { return a.empty(); })) {
        throw Error("ablation switch '" + name + "' needs a comma-separated argument list");
      }
    };
    auto no_args = [&] {
      if (colon != std::string::npos) throw Error("ablation switch '" + name + "' takes no arguments");
    };
    if (name == "full") {
      no_args();
      out.push_back(AblationSwitch::full());
    } else if (name == "no-pretrain") {
      no_args();
      out.push_back(AblationSwitch::no_pretrain());
    } else if (name == "exclude-non-parallel") {
      no_args();
      out.push_back(AblationSwitch::exclude_non_parallel());
    } else if (name == "drop-modality") {
      need_args();
      for (const auto& a : args) out.push_back(AblationSwitch::drop(parse_modality(a)));
    } else if (name == "zero-lambda") {
      need_args();
      for (const auto& a : args) {
        int i = 0;
        try {
          std::size_t used = 0;
          i = std::stoi(a, &used);
          if (used != a.size()) throw std::invalid_argument(a);
        } catch (const std::exception&) {
          throw Error("zero-lambda: '" + a + "' is not an index in 1..5");
        }
        if (i < 1 || i > static_cast<int>(kNumLossTerms)) throw Error("zero-lambda: index " + a + " outside 1..5");
        out.push_back(AblationSwitch::zero_lambda(static_cast<LossTerm>(i - 1)));
      }
    } else if (name == "unlabeled-fraction") {
      need_args();
      for (const auto& a : args) {
        double f = 0.0;
        try {
          std::size_t used = 0;
          f = std::stod(a, &used);
          if (used != a.size()) throw std::invalid_argument(a);
        } catch (const std::exception&) {
          throw Error("unlabeled-fraction: '" + a + "' is not a number");
        }
        if (!(f >= 0.0 && f <= 1.0)) throw Error("unlabeled-fraction: " + a + " outside [0, 1]");
        out.push_back(AblationSwitch::unlabeled_fraction(f));
      }
    } else {
      throw Error("unknown ablation switch '" + name + "'");
    }
  }
  if (out.empty()) throw Error("ablation: empty switch set");
  return out;
}

Dataset restrict_modalities(const Dataset& data, const ModalitySet& keep) {
  Dataset out;
  out.info = data.info;
  out.samples.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    MultimodalSample c = s;
    for (Modality m : kAllModalities) {
      if (!keep[index_of(m)]) c.drop(m);
    }
    if (c.present_count() > 0) out.samples.push_back(std::move(c));
  }
  return out;
}

RunResult run_switch(const ExperimentConfig& base, const ExperimentData& data, const AblationSwitch& sw,
                     std::uint64_t seed) {
  ExperimentConfig cfg = base;
  bool do_pretrain = true;
  std::optional<Dataset> pre_override;
  switch (sw.kind) {
    case AblationSwitch::Kind::kFull:
      break;
    case AblationSwitch::Kind::kNoPretrain:
      do_pretrain = false;
      break;
    case AblationSwitch::Kind::kDropModality:
      cfg.model.modalities[index_of(sw.modality)] = false;
      if (std::none_of(cfg.model.modalities.begin(), cfg.model.modalities.end(), [](bool b) { return b; })) {
        throw Error("ablation: switch '" + sw.label() + "' removes every modality");
      }
      break;
    case AblationSwitch::Kind::kZeroLambda:
      cfg.pretrain.weights[sw.term] = 0.0;
      break;
    case AblationSwitch::Kind::kExcludeNonParallel:
      pre_override = parallel_subset(data.pretrain, cfg.model.modalities);
      break;
    case AblationSwitch::Kind::kUnlabeledFraction: {
      const auto n = static_cast<std::size_t>(std::llround(sw.fraction * static_cast<double>(data.pretrain.samples.size())));
      if (n == 0) {
        do_pretrain = false;
      } else if (n < data.pretrain.samples.size()) {
        // Nested subsets: every fraction takes a prefix of one permutation.
        std::vector<std::size_t> order(data.pretrain.samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(seed, 0xf4ac));
        for (std::size_t i = order.size(); i > 1; --i) {
          std::uniform_int_distribution<std::size_t> pick(0, i - 1);
          std::swap(order[i - 1], order[pick(rng)]);
        }
        order.resize(n);
        std::sort(order.begin(), order.end());
        Dataset sub;
        sub.info = data.pretrain.info;
        for (std::size_t i : order) sub.samples.push_back(data.pretrain.samples[i]);
        pre_override = std::move(sub);
      }
      break;
    }
  }

  const ModalitySet& keep = cfg.model.modalities;
  auto restrict = [&](const Dataset& d) { return restrict_modalities(d, keep); };

  LanistrModel model(cfg.model, derive_seed(seed, 0x30de1));
  RunResult r;
  r.seed = seed;
  if (do_pretrain) {
    const Dataset pre = restrict(pre_override ? *pre_override : data.pretrain);
    if (pre.samples.empty()) throw Error("ablation: switch '" + sw.label() + "' leaves no pretraining data");
    TrainConfig tc = cfg.pretrain;
    tc.seed = derive_seed(seed, 1);
    const auto result = pretrain(model, pre, tc);
    for (const auto& rec : result.log) {
      for (std::size_t t = 0; t < kNumLossTerms; ++t) r.terms_applicable[t] = r.terms_applicable[t] || rec.breakdown.terms[t].has_value();
    }
    r.pretrain_samples = pre.samples.size();
    r.pretrain_steps = result.log.size();
  }
  FinetuneConfig fc = cfg.finetune;
  fc.seed = derive_seed(seed, 2);
  r.trainable_fraction = finetune(model, restrict(data.finetune), fc).trainable_fraction();
  r.test = evaluate(model, restrict(data.test), cfg.eval_batch);
  return r;
}

const AblationRow* AblationTable::find(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.sw.label() == label) return &r;
  }
  return nullptr;
}

void AblationTable::write_csv(std::ostream& out) const {
  out << "label,accuracy_mean,accuracy_std,auroc_mean,auroc_std";
  for (LossTerm t : kAllLossTerms) out << ',' << loss_term_name(t);
  out << ",seeds\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.sw.label() << ',' << r.accuracy.mean << ',' << r.accuracy.std << ',';
    if (r.auroc) out << r.auroc->mean << ',' << r.auroc->std;
    else out << ',';
    for (bool a : r.terms_applicable) out << ',' << (a ? "yes" : "n/a");
    out << ',' << r.runs.size() << '\n';
  }
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(22) << "run" << std::setw(20) << "accuracy" << std::setw(20) << "auroc"
     << "terms\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    std::ostringstream acc, au;
    acc << std::fixed << std::setprecision(2) << 100.0 * r.accuracy.mean << " +- " << 100.0 * r.accuracy.std;
    if (r.auroc) au << std::fixed << std::setprecision(2) << 100.0 * r.auroc->mean << " +- " << 100.0 * r.auroc->std;
    else au << "-";
    std::string terms;
    for (LossTerm t : kAllLossTerms) {
      if (r.terms_applicable[static_cast<std::size_t>(t)]) terms += std::string(terms.empty() ? "" : ",") + std::string(loss_term_name(t));
    }
    os << std::setw(22) << r.sw.label() << std::setw(20) << acc.str() << std::setw(20) << au.str()
       << (terms.empty() ? "-" : terms) << '\n';
  }
  return os.str();
}

AblationTable ablate(const ExperimentConfig& cfg, const ExperimentData& data,
                     const std::vector<AblationSwitch>& switches, std::size_t parallel, const ProgressFn& progress) {
  if (switches.empty()) throw Error("ablation: empty switch set");
  if (cfg.seeds.empty()) throw Error("ablation: no seeds");
  for (const auto& sw : switches) {
    if (sw.kind == AblationSwitch::Kind::kDropModality) {
      ModalitySet left = cfg.model.modalities;
      left[index_of(sw.modality)] = false;
      if (std::none_of(left.begin(), left.end(), [](bool b) { return b; })) {
        throw Error("ablation: switch '" + sw.label() + "' removes every modality");
      }
    }
  }

  std::vector<AblationSwitch> rows;
  const bool has_full = std::any_of(switches.begin(), switches.end(),
                                    [](const AblationSwitch& s) { return s.run_key() == "full"; });
  if (!has_full) rows.push_back(AblationSwitch::full());
  rows.insert(rows.end(), switches.begin(), switches.end());

  // Unique (run key, seed) jobs.
  std::map<std::string, AblationSwitch> unique;
  for (const auto& sw : rows) unique.emplace(sw.run_key(), sw);
  struct Job {
    std::string key;
    AblationSwitch sw;
    std::uint64_t seed;
    RunResult result;
  };
  std::vector<Job> jobs;
  for (const auto& sw : rows) {
    for (std::uint64_t seed : cfg.seeds) {
      const bool seen = std::any_of(jobs.begin(), jobs.end(),
                                    [&](const Job& j) { return j.key == sw.run_key() && j.seed == seed; });
      if (!seen) jobs.push_back({sw.run_key(), unique.at(sw.run_key()), seed, {}});
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        jobs[i].result = run_switch(cfg, data, jobs[i].sw, jobs[i].seed);
        if (progress) {
          std::ostringstream os;
          os << jobs[i].key << " seed " << jobs[i].seed << ": accuracy " << jobs[i].result.test.accuracy;
          std::lock_guard lock(mu);
          progress(os.str());
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallel, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  AblationTable table;
  for (const auto& sw : rows) {
    AblationRow row;
    row.sw = sw;
    std::vector<double> acc, au;
    for (std::uint64_t seed : cfg.seeds) {
      const auto it = std::find_if(jobs.begin(), jobs.end(),
                                   [&](const Job& j) { return j.key == sw.run_key() && j.seed == seed; });
      row.runs.push_back(it->result);
      acc.push_back(it->result.test.accuracy);
      if (it->result.test.auroc) au.push_back(*it->result.test.auroc);
      for (std::size_t t = 0; t < kNumLossTerms; ++t) row.terms_applicable[t] = row.terms_applicable[t] || it->result.terms_applicable[t];
    }
    row.accuracy = mean_std(acc);
    if (au.size() == acc.size()) row.auroc = mean_std(au);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace lanistr
