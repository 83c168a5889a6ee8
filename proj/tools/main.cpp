#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lanistr/ablation.hpp"
#include "lanistr/checkpoint.hpp"
#include "lanistr/config.hpp"
#include "lanistr/datagen.hpp"
#include "lanistr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lanistr;

namespace {

const char* kSplits[] = {"pretrain", "finetune", "val", "test"};

struct Options {
  std::string config;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::array<std::optional<double>, kNumLossTerms> lambda;
  std::optional<std::size_t> epochs;
  std::string dataset, checkpoint, output;
  bool from_scratch = false;
  std::string split;
  std::string switches;
  std::optional<std::size_t> parallel;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "Run config (JSON)");
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--dataset", o.dataset, "Override paths.dataset");
  cmd->add_option("--output", o.output, "Override paths.output");
  cmd->add_flag("--force", o.force, "Replace a non-empty output directory");
}

void add_training(CLI::App* cmd, Options& o) {
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    cmd->add_option("--lambda" + std::to_string(i + 1), o.lambda[i],
                    "Override the " + std::string(loss_term_name(kAllLossTerms[i])) + " weight");
  }
  cmd->add_option("--epochs", o.epochs, "Override the epoch count of this command's training stage");
}

RunConfig load(const Options& o, const std::string& command) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    if (o.lambda[i]) cfg.pretrain.weights.lambda[i] = *o.lambda[i];
  }
  if (o.epochs) {
    if (command == "finetune") cfg.finetune.epochs = *o.epochs;
    else cfg.pretrain.epochs = *o.epochs;
  }
  if (!o.dataset.empty()) cfg.paths.dataset = o.dataset;
  if (!o.checkpoint.empty()) cfg.paths.checkpoint = o.checkpoint;
  if (!o.output.empty()) cfg.paths.output = o.output;
  if (!o.split.empty()) cfg.eval_split = o.split;
  if (!o.switches.empty()) cfg.ablation_switches = o.switches;
  if (o.parallel) cfg.ablation_parallel = *o.parallel;
  cfg.resolve();
  return cfg;
}

const std::string& require_path(const std::string& path, const char* key) {
  if (path.empty()) throw Error(std::string("paths.") + key + " is not set (config or --" + key + ")");
  return path;
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw Error(dir.string() + " is not empty (pass --force to replace it)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

Dataset load_split(const RunConfig& cfg, const std::string& split) {
  const fs::path dir = fs::path(require_path(cfg.paths.dataset, "dataset")) / split;
  if (!fs::is_directory(dir)) throw Error("dataset split not found: " + dir.string());
  Dataset data = import_dataset(dir.string());
  check_compatible(cfg.model, data.info);
  return data;
}

std::uint64_t model_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 0x30de1); }

json metrics_json(const EvalMetrics& m, const std::string& split) {
  json j = {{"split", split}, {"n", m.n}, {"accuracy", m.accuracy}};
  j["auroc"] = m.auroc ? json(*m.auroc) : json(nullptr);
  return j;
}

void print_metrics(const EvalMetrics& m, const std::string& split) {
  std::cout << split << ": n=" << m.n << " accuracy=" << m.accuracy;
  if (m.auroc) std::cout << " auroc=" << *m.auroc;
  std::cout << "\n";
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = load(o, "generate");
  const fs::path root = require_path(cfg.paths.dataset, "dataset");
  const ExperimentData data = make_experiment_data(cfg.generator, cfg.splits);
  prepare_dir(root, o.force);
  const std::string spec = to_json(cfg.generator);
  const Dataset* parts[] = {&data.pretrain, &data.finetune, &data.val, &data.test};
  for (std::size_t i = 0; i < 4; ++i) export_dataset(*parts[i], (root / kSplits[i]).string(), spec);
  write_text(root / "config.json", to_json(cfg));

  std::cout << "dataset " << root.string() << "\n";
  for (std::size_t i = 0; i < 4; ++i) std::cout << "  " << kSplits[i] << ": " << parts[i]->samples.size() << "\n";
  std::cout << "pretrain missingness:";
  for (Modality m : kAllModalities) {
    if (!cfg.generator.modalities[index_of(m)]) continue;
    std::size_t absent = 0;
    for (const auto& s : data.pretrain.samples) absent += s.present(m) ? 0 : 1;
    std::cout << " " << modality_name(m) << "="
              << static_cast<double>(absent) / static_cast<double>(data.pretrain.samples.size());
  }
  std::cout << "\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  const RunConfig cfg = load(o, "pretrain");
  const Dataset data = load_split(cfg, "pretrain");
  const fs::path out = require_path(cfg.paths.output, "output");
  prepare_dir(out, o.force);
  write_text(out / "config.json", to_json(cfg));

  LanistrModel model(cfg.model, model_seed(cfg));
  std::vector<StepRecord> log;
  int status = 0;
  try {
    pretrain(model, data, cfg.pretrain, [&](const StepRecord& r) { log.push_back(r); });
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n  step " << e.step() << ": " << format_breakdown(e.breakdown()) << "\n";
    status = 1;
  }
  write_metrics_csv((out / "metrics.csv").string(), log);
  if (status != 0) return status;
  save_checkpoint(model.parameters(), (out / "checkpoint").string(), to_json(cfg.model));
  std::cout << "pretrained " << log.size() << " steps";
  if (!log.empty()) std::cout << ", last: " << format_breakdown(log.back().breakdown);
  std::cout << "\nrun " << out.string() << "\n";
  return 0;
}

int cmd_finetune(const Options& o) {
  const RunConfig cfg = load(o, "finetune");
  const Dataset train = load_split(cfg, "finetune");
  const Dataset val = load_split(cfg, "val");
  const Dataset eval = load_split(cfg, cfg.eval_split);
  LanistrModel model(cfg.model, model_seed(cfg));
  if (!o.from_scratch) load_checkpoint(model.parameters(), require_path(cfg.paths.checkpoint, "checkpoint"));
  const fs::path out = require_path(cfg.paths.output, "output");
  prepare_dir(out, o.force);
  write_text(out / "config.json", to_json(cfg));

  const FinetuneResult r = finetune(model, train, cfg.finetune);
  const EvalMetrics val_m = evaluate(model, val);
  const EvalMetrics eval_m = evaluate(model, eval);
  json j = metrics_json(eval_m, cfg.eval_split);
  j["val"] = metrics_json(val_m, "val");
  j["from_scratch"] = o.from_scratch;
  j["steps"] = r.steps;
  j["epoch_loss"] = r.epoch_loss;
  j["parameters"] = {{"total", r.counts.total},
                     {"trainable", r.counts.trainable},
                     {"pretraining_only", r.counts.pretraining_only},
                     {"trainable_fraction", r.trainable_fraction()}};
  write_text(out / "metrics.json", j.dump(2) + "\n");
  save_checkpoint(model.parameters(), (out / "checkpoint").string(), to_json(cfg.model));

  std::cout << "trainable parameters: " << r.counts.trainable << " of " << r.counts.total << " ("
            << 100.0 * r.trainable_fraction() << "%)\n";
  print_metrics(val_m, "val");
  print_metrics(eval_m, cfg.eval_split);
  std::cout << "run " << out.string() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const RunConfig cfg = load(o, "evaluate");
  const Dataset eval = load_split(cfg, cfg.eval_split);
  LanistrModel model(cfg.model, model_seed(cfg));
  load_checkpoint(model.parameters(), require_path(cfg.paths.checkpoint, "checkpoint"));
  const EvalMetrics m = evaluate(model, eval);
  const std::string text = metrics_json(m, cfg.eval_split).dump(2) + "\n";
  if (!cfg.paths.output.empty()) {
    const fs::path out = cfg.paths.output;
    prepare_dir(out, o.force);
    write_text(out / "config.json", to_json(cfg));
    write_text(out / "metrics.json", text);
  }
  std::cout << text;
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig cfg = load(o, "ablate");
  const auto switches = parse_switches(cfg.ablation_switches);
  if (switches.empty()) throw Error("ablate: no switches given (ablation.switches or --switches)");
  ExperimentData data;
  data.pretrain = load_split(cfg, "pretrain");
  data.finetune = load_split(cfg, "finetune");
  data.val = load_split(cfg, "val");
  data.test = load_split(cfg, cfg.eval_split);
  const fs::path out = require_path(cfg.paths.output, "output");
  prepare_dir(out, o.force);
  write_text(out / "config.json", to_json(cfg));

  const AblationTable table = ablate(cfg.experiment(), data, switches, cfg.ablation_parallel,
                                     [](const std::string& msg) { std::cerr << msg << "\n"; });
  std::ostringstream csv;
  table.write_csv(csv);
  write_text(out / "ablation.csv", csv.str());
  std::cout << table.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal masked pretraining on synthetic data"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset with pretrain/finetune/val/test splits");
  add_common(gen, o);

  auto* pre = app.add_subcommand("pretrain", "Pretrain on the unlabeled split; writes metrics.csv and a checkpoint");
  add_common(pre, o);
  add_training(pre, o);

  auto* fin = app.add_subcommand("finetune", "Fine-tune fusion and classifier with frozen encoders");
  add_common(fin, o);
  add_training(fin, o);
  fin->add_option("--checkpoint", o.checkpoint, "Override paths.checkpoint");
  fin->add_flag("--from-scratch", o.from_scratch, "Start from random weights instead of a checkpoint");
  fin->add_option("--split", o.split, "Evaluation split (test or val)");

  auto* ev = app.add_subcommand("evaluate", "Accuracy and AUROC of a checkpoint");
  add_common(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "Override paths.checkpoint");
  ev->add_option("--split", o.split, "Evaluation split (test or val)");

  auto* abl = app.add_subcommand("ablate", "Run ablation switches over paired seeds");
  add_common(abl, o);
  add_training(abl, o);
  abl->add_option("--switches", o.switches, "Switch groups, e.g. \"zero-lambda:5;unlabeled-fraction:0,0.5\"");
  abl->add_option("--parallel", o.parallel, "Concurrent runs");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(o);
    if (*pre) return cmd_pretrain(o);
    if (*fin) return cmd_finetune(o);
    if (*ev) return cmd_evaluate(o);
    if (*abl) return cmd_ablate(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
