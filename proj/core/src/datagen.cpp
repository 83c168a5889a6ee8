#include "lanistr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "lanistr/tensor.hpp"

namespace lanistr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kImageNoise = 0.5;
constexpr double kTabularNoise = 0.5;
constexpr double kSeriesNoise = 0.3;

struct Wave {
  double fx = 0.0, fy = 0.0, phase = 0.0;
};

/// Fixed rendering parameters shared by every sample of one spec.
struct World {
  std::size_t k = 0;
  std::vector<double> label_direction;  // unit vector, k
  std::vector<double> text_embedding;   // content vocab x k
  std::vector<Wave> waves;              // channels x k
  std::vector<double> tabular_map;      // F x k
  std::vector<double> tabular_scale;    // F
  std::vector<double> omega0;           // V
  std::vector<double> freq_dir, phase_dir, amp_dir;  // V x k each
  std::vector<double> class_bounds;     // n_classes - 1 increasing thresholds
};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  double lo = -12.0, hi = 12.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

World build_world(const GenSpec& spec) {
  World w;
  w.k = spec.latent_dim;
  const auto& sh = spec.shapes;
  std::mt19937_64 rng(derive_seed(spec.seed, 0x3017d));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto gaussians = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng);
    return v;
  };

  w.label_direction = gaussians(w.k);
  const double norm = std::sqrt(dot(w.label_direction, w.label_direction));
  for (auto& x : w.label_direction) x /= norm;

  w.text_embedding = gaussians((sh.vocab_size - SpecialTokens::kFirstContent) * w.k);

  std::uniform_int_distribution<int> freq(0, 2);
  for (std::size_t i = 0; i < sh.image_channels * w.k; ++i) {
    Wave wave;
    do {
      wave.fx = freq(rng);
      wave.fy = freq(rng);
    } while (wave.fx == 0.0 && wave.fy == 0.0);
    wave.phase = 2.0 * std::numbers::pi * unit(rng);
    w.waves.push_back(wave);
  }

  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(w.k));
  w.tabular_map = gaussians(sh.n_features * w.k);
  for (auto& x : w.tabular_map) x *= inv_sqrt_k;
  const double tab_noise = spec.noise * kTabularNoise;
  for (std::size_t f = 0; f < sh.n_features; ++f) {
    const std::span<const double> row(w.tabular_map.data() + f * w.k, w.k);
    // s ~ N(0, I) for every rho, so the rendered feature has a known variance.
    w.tabular_scale.push_back(1.0 / std::sqrt(dot(row, row) + tab_noise * tab_noise));
  }

  for (std::size_t v = 0; v < sh.n_variables; ++v) w.omega0.push_back(0.4 + 0.8 * unit(rng));
  w.freq_dir = gaussians(sh.n_variables * w.k);
  w.phase_dir = gaussians(sh.n_variables * w.k);
  w.amp_dir = gaussians(sh.n_variables * w.k);

  for (std::size_t c = 1; c < sh.n_classes; ++c) {
    w.class_bounds.push_back(normal_quantile(static_cast<double>(c) / static_cast<double>(sh.n_classes)));
  }
  return w;
}

int label_of(const World& w, std::span<const double> u) {
  const double t = dot(w.label_direction, u);
  int c = 0;
  for (double b : w.class_bounds) c += t > b ? 1 : 0;
  return c;
}

std::vector<int> render_text(const World& w, const GenSpec& spec, std::span<const double> s, std::mt19937_64& rng) {
  const std::size_t vc = spec.shapes.vocab_size - SpecialTokens::kFirstContent;
  const double scale = spec.text_sharpness / std::sqrt(static_cast<double>(w.k));
  std::vector<double> cumulative(vc);
  double total = 0.0;
  std::vector<double> logits(vc);
  for (std::size_t j = 0; j < vc; ++j) logits[j] = scale * dot({w.text_embedding.data() + j * w.k, w.k}, s);
  const double top = *std::max_element(logits.begin(), logits.end());
  for (std::size_t j = 0; j < vc; ++j) {
    total += std::exp(logits[j] - top);
    cumulative[j] = total;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> tokens(spec.shapes.text_length);
  for (auto& t : tokens) {
    const double r = unit(rng) * total;
    const auto j = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    t = SpecialTokens::kFirstContent + static_cast<int>(std::min(j, vc - 1));
  }
  return tokens;
}

ImagePayload render_image(const World& w, const GenSpec& spec, std::span<const double> s, std::mt19937_64& rng) {
  const auto& sh = spec.shapes;
  ImagePayload img{sh.image_size, sh.image_size, sh.image_channels, {}};
  img.pixels.resize(sh.image_size * sh.image_size * sh.image_channels);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(w.k));
  const double two_pi_over = 2.0 * std::numbers::pi / static_cast<double>(sh.image_size);
  for (std::size_t y = 0; y < sh.image_size; ++y) {
    for (std::size_t x = 0; x < sh.image_size; ++x) {
      for (std::size_t c = 0; c < sh.image_channels; ++c) {
        double v = 0.0;
        for (std::size_t b = 0; b < w.k; ++b) {
          const Wave& wave = w.waves[c * w.k + b];
          v += s[b] * std::cos(two_pi_over * (wave.fx * static_cast<double>(x) + wave.fy * static_cast<double>(y)) +
                               wave.phase);
        }
        img.pixels[(y * sh.image_size + x) * sh.image_channels + c] =
            v * inv_sqrt_k + spec.noise * kImageNoise * normal(rng);
      }
    }
  }
  return img;
}

std::vector<double> render_tabular(const World& w, const GenSpec& spec, std::span<const double> s,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(spec.shapes.n_features);
  for (std::size_t f = 0; f < x.size(); ++f) {
    const double clean = dot({w.tabular_map.data() + f * w.k, w.k}, s);
    x[f] = (clean + spec.noise * kTabularNoise * normal(rng)) * w.tabular_scale[f];
  }
  return x;
}

SeriesPayload render_series(const World& w, const GenSpec& spec, std::span<const double> s, std::mt19937_64& rng) {
  const auto& sh = spec.shapes;
  SeriesPayload out{sh.series_length, sh.n_variables, std::vector<double>(sh.series_length * sh.n_variables)};
  std::normal_distribution<double> normal(0.0, 1.0);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(w.k));
  for (std::size_t v = 0; v < sh.n_variables; ++v) {
    const double omega = w.omega0[v] * (1.0 + 0.5 * std::tanh(dot({w.freq_dir.data() + v * w.k, w.k}, s) * inv_sqrt_k));
    const double phase = std::numbers::pi * std::tanh(dot({w.phase_dir.data() + v * w.k, w.k}, s) * inv_sqrt_k);
    const double amp = 1.0 + 0.5 * std::tanh(dot({w.amp_dir.data() + v * w.k, w.k}, s) * inv_sqrt_k);
    for (std::size_t t = 0; t < sh.series_length; ++t) {
      out.values[t * sh.n_variables + v] = amp * std::sin(omega * static_cast<double>(t) + phase);
    }
  }
  for (auto& x : out.values) x += spec.noise * kSeriesNoise * normal(rng);
  return out;
}

}  // namespace

void GenSpec::validate() const {
  if (n_samples == 0) throw Error("generator spec: n_samples must be positive");
  if (latent_dim == 0) throw Error("generator spec: latent_dim must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error("generator spec: rho must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw Error("generator spec: noise must be >= 0");
  if (!(text_sharpness >= 0.0)) throw Error("generator spec: text_sharpness must be >= 0");
  const auto& sh = shapes;
  if (sh.n_classes < 2) throw Error("generator spec: need at least 2 classes");
  bool any = false;
  for (Modality m : kAllModalities) {
    const auto i = index_of(m);
    if (!modalities[i]) continue;
    if (!(missingness[i] >= 0.0 && missingness[i] < 1.0)) {
      throw Error("generator spec: missingness of " + std::string(modality_name(m)) + " must lie in [0, 1)");
    }
    any = true;
  }
  if (!any) throw Error("generator spec: no modality enabled");
  if (modalities[index_of(Modality::kText)] &&
      (sh.text_length == 0 || sh.vocab_size <= static_cast<std::size_t>(SpecialTokens::kFirstContent))) {
    throw Error("generator spec: text needs length > 0 and more than 3 vocabulary ids");
  }
  if (modalities[index_of(Modality::kImage)] && (sh.image_size == 0 || sh.image_channels == 0)) {
    throw Error("generator spec: image size and channels must be positive");
  }
  if (modalities[index_of(Modality::kTabular)] && sh.n_features == 0) {
    throw Error("generator spec: n_features must be positive");
  }
  if (modalities[index_of(Modality::kTimeSeries)] && (sh.series_length == 0 || sh.n_variables == 0)) {
    throw Error("generator spec: series length and variables must be positive");
  }
}

GeneratedData generate_with_latents(const GenSpec& spec) {
  spec.validate();
  const World world = build_world(spec);
  GeneratedData out;
  out.dataset.info = spec.shapes;
  out.dataset.info.feature_std.clear();
  out.dataset.samples.reserve(spec.n_samples);
  out.latents.reserve(spec.n_samples);
  const double keep = std::sqrt(1.0 - spec.rho * spec.rho);

  std::vector<Modality> enabled;
  for (Modality m : kAllModalities) {
    if (spec.modalities[index_of(m)]) enabled.push_back(m);
  }

  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    MultimodalSample s;
    s.id = spec.first_id + i;
    std::mt19937_64 latent_rng(derive_seed(spec.seed, s.id, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> u(world.k);
    for (auto& x : u) x = normal(latent_rng);

    std::mt19937_64 drop_rng(derive_seed(spec.seed, s.id, 0xd0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ModalitySet present{};
    bool any = false;
    for (Modality m : enabled) {
      present[index_of(m)] = unit(drop_rng) >= spec.missingness[index_of(m)];
      any = any || present[index_of(m)];
    }
    if (!any) {
      // Keep one modality, chosen uniformly, so no sample is empty.
      std::uniform_int_distribution<std::size_t> pick(0, enabled.size() - 1);
      present[index_of(enabled[pick(drop_rng)])] = true;
    }

    for (Modality m : enabled) {
      if (!present[index_of(m)]) continue;
      std::mt19937_64 rng(derive_seed(spec.seed, s.id, 1 + index_of(m)));
      std::vector<double> sig(world.k);
      for (std::size_t b = 0; b < world.k; ++b) sig[b] = spec.rho * u[b] + keep * normal(rng);
      switch (m) {
        case Modality::kText:
          s.text = render_text(world, spec, sig, rng);
          break;
        case Modality::kImage:
          s.image = render_image(world, spec, sig, rng);
          break;
        case Modality::kTabular:
          s.tabular = render_tabular(world, spec, sig, rng);
          break;
        case Modality::kTimeSeries:
          s.timeseries = render_series(world, spec, sig, rng);
          break;
      }
    }
    if (spec.labeled) s.label = label_of(world, u);
    out.dataset.samples.push_back(std::move(s));
    out.latents.push_back(std::move(u));
  }
  out.dataset.info.feature_std = tabular_feature_std(out.dataset);
  return out;
}

Dataset generate(const GenSpec& spec) { return generate_with_latents(spec).dataset; }

int label_from_latent(const GenSpec& spec, std::span<const double> u) {
  if (u.size() != spec.latent_dim) throw Error("label_from_latent: latent has wrong dimension");
  return label_of(build_world(spec), u);
}

std::vector<double> tabular_feature_std(const Dataset& data) {
  const std::size_t f = data.info.n_features;
  std::vector<double> sum(f, 0.0), sq(f, 0.0);
  std::size_t n = 0;
  for (const auto& s : data.samples) {
    if (!s.tabular) continue;
    ++n;
    for (std::size_t j = 0; j < f; ++j) sum[j] += (*s.tabular)[j];
  }
  if (n == 0) return std::vector<double>(f, 1.0);
  std::vector<double> mean(f);
  for (std::size_t j = 0; j < f; ++j) mean[j] = sum[j] / static_cast<double>(n);
  for (const auto& s : data.samples) {
    if (!s.tabular) continue;
    for (std::size_t j = 0; j < f; ++j) {
      const double d = (*s.tabular)[j] - mean[j];
      sq[j] += d * d;
    }
  }
  std::vector<double> out(f);
  for (std::size_t j = 0; j < f; ++j) out[j] = std::sqrt(sq[j] / static_cast<double>(n));
  return out;
}

std::vector<Dataset> split_counts(const Dataset& data, std::span<const std::size_t> counts, std::uint64_t seed) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total != data.samples.size()) {
    throw Error("split: counts sum to " + std::to_string(total) + " but dataset has " +
                std::to_string(data.samples.size()) + " samples");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) throw Error("split: part " + std::to_string(i) + " would be empty");
  }
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0x5b1));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<Dataset> parts;
  std::size_t pos = 0;
  for (std::size_t c : counts) {
    Dataset d;
    d.info = data.info;
    for (std::size_t i = 0; i < c; ++i) d.samples.push_back(data.samples[order[pos + i]]);
    pos += c;
    parts.push_back(std::move(d));
  }
  return parts;
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw Error("split: no fractions");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw Error("split: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("split: fractions must sum to 1");
  const std::size_t n = data.samples.size();
  std::vector<std::size_t> counts;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    const auto c = static_cast<std::size_t>(std::llround(fractions[i] * static_cast<double>(n)));
    if (used + c > n) throw Error("split: fractions exceed dataset size");
    counts.push_back(c);
    used += c;
  }
  counts.push_back(n - used);
  return split_counts(data, counts, seed);
}

Dataset parallel_subset(const Dataset& data, const ModalitySet& modalities) {
  Dataset out;
  out.info = data.info;
  for (const auto& s : data.samples) {
    bool all = true;
    for (Modality m : kAllModalities) all = all && (!modalities[index_of(m)] || s.present(m));
    if (all) out.samples.push_back(s);
  }
  return out;
}

ExperimentData make_experiment_data(const GenSpec& spec, const ExperimentSizes& sizes) {
  GenSpec pre = spec;
  pre.n_samples = sizes.pretrain;
  pre.labeled = false;
  pre.first_id = spec.first_id;

  GenSpec lab = spec;
  lab.n_samples = sizes.finetune + sizes.val + sizes.test;
  lab.labeled = true;
  lab.missingness.fill(0.0);
  lab.first_id = spec.first_id + sizes.pretrain;

  ExperimentData out;
  out.pretrain = generate(pre);
  const Dataset labeled = generate(lab);
  const std::array<std::size_t, 3> counts = {sizes.finetune, sizes.val, sizes.test};
  auto parts = split_counts(labeled, counts, derive_seed(spec.seed, 0x1abe1));
  out.finetune = std::move(parts[0]);
  out.val = std::move(parts[1]);
  out.test = std::move(parts[2]);
  // Reconstruction losses normalize by the pretraining population.
  out.finetune.info.feature_std = out.pretrain.info.feature_std;
  out.val.info.feature_std = out.pretrain.info.feature_std;
  out.test.info.feature_std = out.pretrain.info.feature_std;
  return out;
}

// ---------------------------------------------------------------------------
// On-disk form

namespace {

constexpr const char* kFiles[kNumModalities] = {"text.bin", "image.bin", "tabular.bin", "timeseries.bin"};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  double d;
  std::memcpy(&d, &v, sizeof d);
  return d;
}

std::size_t record_bytes(Modality m, const DatasetInfo& info) {
  switch (m) {
    case Modality::kText:
      return 4 * info.text_length;
    case Modality::kImage:
      return 8 * info.image_size * info.image_size * info.image_channels;
    case Modality::kTabular:
      return 8 * info.n_features;
    case Modality::kTimeSeries:
      return 8 * info.series_length * info.n_variables;
  }
  return 0;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(path.filename().string() + ": cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json info_to_json(const DatasetInfo& i) {
  return {{"text_length", i.text_length},       {"vocab_size", i.vocab_size},
          {"image_size", i.image_size},         {"image_channels", i.image_channels},
          {"n_features", i.n_features},         {"series_length", i.series_length},
          {"n_variables", i.n_variables},       {"n_classes", i.n_classes},
          {"feature_std", i.feature_std}};
}

DatasetInfo info_from_json(const json& j) {
  DatasetInfo i;
  i.text_length = j.at("text_length").get<std::size_t>();
  i.vocab_size = j.at("vocab_size").get<std::size_t>();
  i.image_size = j.at("image_size").get<std::size_t>();
  i.image_channels = j.at("image_channels").get<std::size_t>();
  i.n_features = j.at("n_features").get<std::size_t>();
  i.series_length = j.at("series_length").get<std::size_t>();
  i.n_variables = j.at("n_variables").get<std::size_t>();
  i.n_classes = j.at("n_classes").get<std::size_t>();
  i.feature_std = j.at("feature_std").get<std::vector<double>>();
  return i;
}

void check_payload_shape(const MultimodalSample& s, const DatasetInfo& info) {
  auto bad = [&](const char* what) {
    throw Error("export: sample " + std::to_string(s.id) + " " + what + " does not match the dataset shapes");
  };
  if (s.text && s.text->size() != info.text_length) bad("text");
  if (s.image && (s.image->height != info.image_size || s.image->width != info.image_size ||
                  s.image->channels != info.image_channels || s.image->pixels.size() != record_bytes(Modality::kImage, info) / 8)) {
    bad("image");
  }
  if (s.tabular && s.tabular->size() != info.n_features) bad("tabular");
  if (s.timeseries && (s.timeseries->length != info.series_length || s.timeseries->variables != info.n_variables ||
                       s.timeseries->values.size() != info.series_length * info.n_variables)) {
    bad("time series");
  }
}

}  // namespace

void export_dataset(const Dataset& data, const std::string& dir, const std::string& spec_json) {
  fs::create_directories(dir);
  std::array<std::string, kNumModalities> blobs;
  std::array<std::size_t, kNumModalities> counts{};
  std::string labels = "id,label\n";
  std::size_t n_labels = 0;

  json samples = json::array();
  for (const auto& s : data.samples) {
    check_payload_shape(s, data.info);
    json entry;
    entry["id"] = s.id;
    json presence = json::array();
    json offsets = json::object();
    for (Modality m : kAllModalities) {
      if (!s.present(m)) continue;
      const auto mi = index_of(m);
      presence.push_back(std::string(modality_name(m)));
      offsets[std::string(modality_name(m))] = blobs[mi].size();
      ++counts[mi];
      auto& b = blobs[mi];
      switch (m) {
        case Modality::kText:
          for (int t : *s.text) put_u32(b, static_cast<std::uint32_t>(t));
          break;
        case Modality::kImage:
          for (double v : s.image->pixels) put_f64(b, v);
          break;
        case Modality::kTabular:
          for (double v : *s.tabular) put_f64(b, v);
          break;
        case Modality::kTimeSeries:
          for (double v : s.timeseries->values) put_f64(b, v);
          break;
      }
    }
    entry["presence"] = presence;
    entry["offsets"] = offsets;
    entry["labeled"] = s.label.has_value();
    if (s.label) {
      labels += std::to_string(s.id) + "," + std::to_string(*s.label) + "\n";
      ++n_labels;
    }
    samples.push_back(std::move(entry));
  }

  json manifest;
  manifest["format"] = "lanistr-dataset";
  manifest["version"] = 1;
  manifest["spec"] = spec_json.empty() ? json(nullptr) : json::parse(spec_json);
  manifest["info"] = info_to_json(data.info);
  json jc;
  jc["samples"] = data.samples.size();
  for (Modality m : kAllModalities) jc[std::string(modality_name(m))] = counts[index_of(m)];
  jc["labels"] = n_labels;
  manifest["counts"] = jc;
  manifest["samples"] = std::move(samples);

  const fs::path root(dir);
  for (std::size_t m = 0; m < kNumModalities; ++m) write_file(root / kFiles[m], blobs[m]);
  write_file(root / "labels.csv", labels);
  write_file(root / "manifest.json", manifest.dump(1) + "\n");
}

Dataset import_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error("import: dataset directory " + dir + " does not exist");
  json manifest;
  try {
    manifest = json::parse(read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(std::string("manifest.json: ") + e.what());
  }

  Dataset data;
  std::array<std::string, kNumModalities> blobs;
  std::array<std::size_t, kNumModalities> cursor{};
  std::size_t labeled = 0;
  try {
    if (manifest.at("format") != "lanistr-dataset" || manifest.at("version") != 1) {
      throw Error("manifest.json: unsupported format or version");
    }
    data.info = info_from_json(manifest.at("info"));
    const json& counts = manifest.at("counts");
    const json& samples = manifest.at("samples");
    if (counts.at("samples").get<std::size_t>() != samples.size()) {
      throw Error("manifest.json: counts.samples = " + counts.at("samples").dump() + " but " +
                  std::to_string(samples.size()) + " sample entries");
    }
    for (Modality m : kAllModalities) {
      const auto mi = index_of(m);
      blobs[mi] = read_file(root / kFiles[mi]);
      const std::size_t expected = counts.at(std::string(modality_name(m))).get<std::size_t>() * record_bytes(m, data.info);
      if (blobs[mi].size() != expected) {
        throw Error(std::string(kFiles[mi]) + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(blobs[mi].size()));
      }
    }

    for (const json& e : samples) {
      MultimodalSample s;
      s.id = e.at("id").get<std::uint64_t>();
      const json& offsets = e.at("offsets");
      for (const json& name : e.at("presence")) {
        const Modality m = parse_modality(name.get<std::string>());
        const auto mi = index_of(m);
        const std::size_t off = offsets.at(name.get<std::string>()).get<std::size_t>();
        const std::size_t rb = record_bytes(m, data.info);
        if (off != cursor[mi] || off + rb > blobs[mi].size()) {
          throw Error(std::string(kFiles[mi]) + ": bad offset " + std::to_string(off) + " for sample " +
                      std::to_string(s.id));
        }
        cursor[mi] += rb;
        const std::string& b = blobs[mi];
        switch (m) {
          case Modality::kText: {
            std::vector<int> t(data.info.text_length);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(get_u32(b, off + 4 * i));
            s.text = std::move(t);
            break;
          }
          case Modality::kImage: {
            ImagePayload img{data.info.image_size, data.info.image_size, data.info.image_channels, {}};
            img.pixels.resize(rb / 8);
            for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = get_f64(b, off + 8 * i);
            s.image = std::move(img);
            break;
          }
          case Modality::kTabular: {
            std::vector<double> x(data.info.n_features);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = get_f64(b, off + 8 * i);
            s.tabular = std::move(x);
            break;
          }
          case Modality::kTimeSeries: {
            SeriesPayload ts{data.info.series_length, data.info.n_variables, std::vector<double>(rb / 8)};
            for (std::size_t i = 0; i < ts.values.size(); ++i) ts.values[i] = get_f64(b, off + 8 * i);
            s.timeseries = std::move(ts);
            break;
          }
        }
      }
      if (e.at("labeled").get<bool>()) {
        s.label = 0;  // filled from labels.csv below
        ++labeled;
      }
      data.samples.push_back(std::move(s));
    }
    if (counts.at("labels").get<std::size_t>() != labeled) {
      throw Error("manifest.json: counts.labels disagrees with per-sample label flags");
    }
  } catch (const json::exception& e) {
    throw Error(std::string("manifest.json: ") + e.what());
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (cursor[m] != blobs[m].size()) throw Error(std::string(kFiles[m]) + ": trailing bytes not listed in manifest");
  }

  std::istringstream csv(read_file(root / "labels.csv"));
  std::string line;
  if (!std::getline(csv, line) || line != "id,label") throw Error("labels.csv: missing header 'id,label'");
  std::vector<std::pair<std::uint64_t, int>> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      std::size_t used = 0;
      const auto id = std::stoull(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("id");
      const std::string rest = line.substr(comma + 1);
      const int label = std::stoi(rest, &used);
      if (used != rest.size()) throw std::invalid_argument("label");
      rows.emplace_back(id, label);
    } catch (const std::exception&) {
      throw Error("labels.csv: malformed row '" + line + "'");
    }
  }
  if (rows.size() != labeled) {
    throw Error("labels.csv: manifest lists " + std::to_string(labeled) + " labeled samples, found " +
                std::to_string(rows.size()) + " rows");
  }
  std::size_t next = 0;
  for (auto& s : data.samples) {
    if (!s.label) continue;
    if (rows[next].first != s.id) {
      throw Error("labels.csv: row " + std::to_string(next + 1) + " has id " + std::to_string(rows[next].first) +
                  ", expected " + std::to_string(s.id));
    }
    s.label = rows[next].second;
    ++next;
  }
  return data;
}

}  // namespace lanistr
