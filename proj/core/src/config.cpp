#include "lanistr/config.hpp"

#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lanistr {

using nlohmann::json;

namespace {

/// Strict view of one JSON object: every key must be read before finish().
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: '" + display() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error("config: '" + where(key) + "' has the wrong type (got " + j_.at(key).dump() + ")");
    }
  }

  template <class F>
  void section(const char* key, F&& fn) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    Obj child(j_.at(key), where(key));
    fn(child);
    child.finish();
  }

  const json* raw(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw Error("config: unknown key '" + where(it.key()) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

ModalitySet modalities_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw Error("config: '" + where + "' must be a list of modality names");
  ModalitySet set{};
  for (const auto& n : j) {
    if (!n.is_string()) throw Error("config: '" + where + "' must be a list of modality names");
    try {
      set[index_of(parse_modality(n.get<std::string>()))] = true;
    } catch (const Error& e) {
      throw Error("config: '" + where + "': " + e.what());
    }
  }
  return set;
}

json modalities_to(const ModalitySet& set) {
  json a = json::array();
  for (Modality m : kAllModalities) {
    if (set[index_of(m)]) a.push_back(std::string(modality_name(m)));
  }
  return a;
}

void read_transformer(Obj& o, TransformerConfig& t) {
  o.get("d_model", t.d_model);
  o.get("n_heads", t.n_heads);
  o.get("n_layers", t.n_layers);
  o.get("d_ff", t.d_ff);
  o.get("dropout", t.dropout);
}

void write_transformer(json& j, const TransformerConfig& t) {
  j["d_model"] = t.d_model;
  j["n_heads"] = t.n_heads;
  j["n_layers"] = t.n_layers;
  j["d_ff"] = t.d_ff;
  j["dropout"] = t.dropout;
}

void read_model(Obj& o, ModelConfig& m) {
  if (const json* mods = o.raw("modalities")) m.modalities = modalities_from(*mods, o.where("modalities"));
  o.section("text", [&](Obj& t) {
    read_transformer(t, m.text.transformer);
    t.get("vocab_size", m.text.vocab_size);
    t.get("max_length", m.text.max_length);
  });
  o.section("image", [&](Obj& t) {
    read_transformer(t, m.image.transformer);
    t.get("image_size", m.image.image_size);
    t.get("channels", m.image.channels);
    t.get("patch_size", m.image.patch_size);
  });
  o.section("tabular", [&](Obj& t) {
    t.get("n_features", m.tabular.n_features);
    t.get("d_model", m.tabular.d_model);
    t.get("d_attention", m.tabular.d_attention);
    t.get("n_decision_steps", m.tabular.n_decision_steps);
    t.get("gamma", m.tabular.gamma);
  });
  o.section("timeseries", [&](Obj& t) {
    read_transformer(t, m.timeseries.transformer);
    t.get("series_length", m.timeseries.series_length);
    t.get("n_variables", m.timeseries.n_variables);
  });
  o.section("fusion", [&](Obj& t) {
    read_transformer(t, m.fusion.transformer);
    t.get("projector_hidden", m.fusion.projector_hidden);
  });
  o.get("classifier_hidden", m.classifier_hidden);
  o.get("n_classes", m.n_classes);
}

json write_model(const ModelConfig& m) {
  json j;
  j["modalities"] = modalities_to(m.modalities);
  json text, image, tab, ts, fusion;
  write_transformer(text, m.text.transformer);
  text["vocab_size"] = m.text.vocab_size;
  text["max_length"] = m.text.max_length;
  write_transformer(image, m.image.transformer);
  image["image_size"] = m.image.image_size;
  image["channels"] = m.image.channels;
  image["patch_size"] = m.image.patch_size;
  tab["n_features"] = m.tabular.n_features;
  tab["d_model"] = m.tabular.d_model;
  tab["d_attention"] = m.tabular.d_attention;
  tab["n_decision_steps"] = m.tabular.n_decision_steps;
  tab["gamma"] = m.tabular.gamma;
  write_transformer(ts, m.timeseries.transformer);
  ts["series_length"] = m.timeseries.series_length;
  ts["n_variables"] = m.timeseries.n_variables;
  write_transformer(fusion, m.fusion.transformer);
  fusion["projector_hidden"] = m.fusion.projector_hidden;
  j["text"] = text;
  j["image"] = image;
  j["tabular"] = tab;
  j["timeseries"] = ts;
  j["fusion"] = fusion;
  j["classifier_hidden"] = m.classifier_hidden;
  j["n_classes"] = m.n_classes;
  return j;
}

void read_generator(Obj& o, GenSpec& g) {
  o.get("n_samples", g.n_samples);
  o.get("latent_dim", g.latent_dim);
  if (const json* mods = o.raw("modalities")) g.modalities = modalities_from(*mods, o.where("modalities"));
  o.section("missingness", [&](Obj& m) {
    for (Modality mod : kAllModalities) m.get(std::string(modality_name(mod)).c_str(), g.missingness[index_of(mod)]);
  });
  o.get("rho", g.rho);
  o.get("noise", g.noise);
  o.get("text_sharpness", g.text_sharpness);
  o.get("labeled", g.labeled);
  o.get("first_id", g.first_id);
  o.section("shapes", [&](Obj& s) {
    auto& sh = g.shapes;
    s.get("text_length", sh.text_length);
    s.get("vocab_size", sh.vocab_size);
    s.get("image_size", sh.image_size);
    s.get("image_channels", sh.image_channels);
    s.get("n_features", sh.n_features);
    s.get("series_length", sh.series_length);
    s.get("n_variables", sh.n_variables);
    s.get("n_classes", sh.n_classes);
  });
}

json write_generator(const GenSpec& g) {
  json j;
  j["n_samples"] = g.n_samples;
  j["latent_dim"] = g.latent_dim;
  j["modalities"] = modalities_to(g.modalities);
  json miss;
  for (Modality m : kAllModalities) miss[std::string(modality_name(m))] = g.missingness[index_of(m)];
  j["missingness"] = miss;
  j["rho"] = g.rho;
  j["noise"] = g.noise;
  j["text_sharpness"] = g.text_sharpness;
  j["labeled"] = g.labeled;
  j["first_id"] = g.first_id;
  const auto& sh = g.shapes;
  j["shapes"] = {{"text_length", sh.text_length},     {"vocab_size", sh.vocab_size},
                 {"image_size", sh.image_size},       {"image_channels", sh.image_channels},
                 {"n_features", sh.n_features},       {"series_length", sh.series_length},
                 {"n_variables", sh.n_variables},     {"n_classes", sh.n_classes}};
  return j;
}

void read_adamw(Obj& o, AdamWConfig& a) {
  o.get("weight_decay", a.weight_decay);
  o.get("beta1", a.beta1);
  o.get("beta2", a.beta2);
  o.get("eps", a.eps);
}

void write_adamw(json& j, const AdamWConfig& a) {
  j["weight_decay"] = a.weight_decay;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["eps"] = a.eps;
}

}  // namespace

ModelConfig model_preset(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper" || name == "paper-mimic") return ModelConfig::paper_mimic();
  if (name == "paper-amazon") return ModelConfig::paper_amazon();
  throw Error("config: unknown model preset '" + name + "' (expected desk, paper, paper-mimic or paper-amazon)");
}

void RunConfig::resolve() {
  generator.seed = seed;
  model.modalities = generator.modalities;
  pretrain.seed = seed;
  finetune.seed = seed;
  const auto& sh = generator.shapes;
  model.text.vocab_size = sh.vocab_size;
  model.text.max_length = sh.text_length;
  model.image.image_size = sh.image_size;
  model.image.channels = sh.image_channels;
  model.tabular.n_features = sh.n_features;
  model.timeseries.series_length = sh.series_length;
  model.timeseries.n_variables = sh.n_variables;
  model.n_classes = sh.n_classes;
  generator.validate();
  model.validate();
  pretrain.validate();
  finetune.validate();
  if (eval_split != "test" && eval_split != "val") throw Error("config: eval_split must be 'test' or 'val'");
  if (ablation_seeds.empty()) throw Error("config: ablation.seeds must not be empty");
  if (ablation_parallel == 0) throw Error("config: ablation.parallel must be >= 1");
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.model = model;
  e.pretrain = pretrain;
  e.finetune = finetune;
  e.seeds = ablation_seeds;
  return e;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Obj o(root, "");
  o.get("seed", cfg.seed);
  o.section("generator", [&](Obj& g) { read_generator(g, cfg.generator); });
  o.section("splits", [&](Obj& s) {
    s.get("pretrain", cfg.splits.pretrain);
    s.get("finetune", cfg.splits.finetune);
    s.get("val", cfg.splits.val);
    s.get("test", cfg.splits.test);
  });
  std::optional<ModalitySet> model_modalities;
  o.section("model", [&](Obj& m) {
    m.get("preset", cfg.preset);
    cfg.model = model_preset(cfg.preset);
    read_model(m, cfg.model);
    if (root.at("model").contains("modalities")) model_modalities = cfg.model.modalities;
  });
  o.section("pretrain", [&](Obj& p) {
    auto& t = cfg.pretrain;
    p.get("epochs", t.epochs);
    p.get("batch_size", t.batch_size);
    p.get("lr", t.lr);
    p.get("lr_min", t.lr_min);
    read_adamw(p, t.adamw);
    p.get("shared_mask_draw", t.shared_mask_draw);
    p.get("deterministic", t.deterministic);
    p.get("stop_gradient", t.stop_gradient);
  });
  o.section("loss_weights", [&](Obj& w) {
    for (LossTerm t : kAllLossTerms) w.get(std::string(loss_term_name(t)).c_str(), cfg.pretrain.weights[t]);
  });
  o.section("masking", [&](Obj& m) {
    auto& k = cfg.pretrain.masking;
    m.get("text_ratio", k.text_ratio);
    m.get("image_ratio", k.image_ratio);
    m.get("tabular_ratio", k.tabular_ratio);
    m.get("timeseries_ratio", k.timeseries_ratio);
    m.get("timeseries_mean_mask_len", k.timeseries_mean_mask_len);
    m.get("text_mask_token_prob", k.text_mask_token_prob);
    m.get("text_random_token_prob", k.text_random_token_prob);
  });
  o.section("finetune", [&](Obj& f) {
    auto& t = cfg.finetune;
    f.get("epochs", t.epochs);
    f.get("batch_size", t.batch_size);
    f.get("lr", t.lr);
    f.get("lr_min", t.lr_min);
    read_adamw(f, t.adamw);
    f.get("deterministic", t.deterministic);
  });
  o.get("eval_split", cfg.eval_split);
  o.section("ablation", [&](Obj& a) {
    a.get("seeds", cfg.ablation_seeds);
    a.get("switches", cfg.ablation_switches);
    a.get("parallel", cfg.ablation_parallel);
  });
  o.section("paths", [&](Obj& p) {
    p.get("dataset", cfg.paths.dataset);
    p.get("checkpoint", cfg.paths.checkpoint);
    p.get("output", cfg.paths.output);
  });
  o.finish();
  if (model_modalities && *model_modalities != cfg.generator.modalities) {
    throw Error("config: 'model.modalities' must match 'generator.modalities'");
  }
  cfg.resolve();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["generator"] = write_generator(cfg.generator);
  j["splits"] = {{"pretrain", cfg.splits.pretrain},
                 {"finetune", cfg.splits.finetune},
                 {"val", cfg.splits.val},
                 {"test", cfg.splits.test}};
  json model = write_model(cfg.model);
  model["preset"] = cfg.preset;
  j["model"] = model;
  const auto& t = cfg.pretrain;
  json pre = {{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"lr_min", t.lr_min},
              {"shared_mask_draw", t.shared_mask_draw},
              {"deterministic", t.deterministic},
              {"stop_gradient", t.stop_gradient}};
  write_adamw(pre, t.adamw);
  j["pretrain"] = pre;
  json w;
  for (LossTerm term : kAllLossTerms) w[std::string(loss_term_name(term))] = t.weights[term];
  j["loss_weights"] = w;
  const auto& k = t.masking;
  j["masking"] = {{"text_ratio", k.text_ratio},
                  {"image_ratio", k.image_ratio},
                  {"tabular_ratio", k.tabular_ratio},
                  {"timeseries_ratio", k.timeseries_ratio},
                  {"timeseries_mean_mask_len", k.timeseries_mean_mask_len},
                  {"text_mask_token_prob", k.text_mask_token_prob},
                  {"text_random_token_prob", k.text_random_token_prob}};
  const auto& f = cfg.finetune;
  json fin = {{"epochs", f.epochs},
              {"batch_size", f.batch_size},
              {"lr", f.lr},
              {"lr_min", f.lr_min},
              {"deterministic", f.deterministic}};
  write_adamw(fin, f.adamw);
  j["finetune"] = fin;
  j["eval_split"] = cfg.eval_split;
  j["ablation"] = {{"seeds", cfg.ablation_seeds},
                   {"switches", cfg.ablation_switches},
                   {"parallel", cfg.ablation_parallel}};
  j["paths"] = {{"dataset", cfg.paths.dataset}, {"checkpoint", cfg.paths.checkpoint}, {"output", cfg.paths.output}};
  return j.dump(2) + "\n";
}

std::string to_json(const GenSpec& spec) { return write_generator(spec).dump(); }

std::string to_json(const ModelConfig& cfg) { return write_model(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig m = ModelConfig::desk();
  Obj o(j, "model");
  read_model(o, m);
  o.finish();
  m.validate();
  return m;
}

}  // namespace lanistr
