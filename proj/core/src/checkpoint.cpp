#include "lanistr/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace lanistr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("checkpoint: cannot open " + p.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw Error("checkpoint: failed writing " + p.string());
}

json read_manifest(const fs::path& dir) {
  try {
    return json::parse(slurp(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint manifest.json: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& dir, const std::string& extra_json) {
  if (!store.allocated()) throw Error("checkpoint: store holds no values");
  json params = json::array();
  std::string blob;
  for (const auto& p : store.params()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    for (double d : p.tensor.data()) {
      std::uint64_t v;
      std::memcpy(&v, &d, sizeof v);
      for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  json manifest;
  manifest["format"] = "lanistr-checkpoint";
  manifest["version"] = 1;
  manifest["blob"] = "parameters.bin";
  manifest["parameters"] = std::move(params);
  manifest["config"] = extra_json.empty() ? json(nullptr) : json::parse(extra_json);

  const fs::path target = fs::absolute(fs::path(dir)).lexically_normal();
  const fs::path parent = target.parent_path();
  fs::create_directories(parent);
  const fs::path staging = parent / (target.filename().string() + ".tmp");
  const fs::path old = parent / (target.filename().string() + ".old");
  fs::remove_all(staging);
  fs::create_directories(staging);
  dump(staging / "parameters.bin", blob);
  dump(staging / "manifest.json", manifest.dump(1) + "\n");
  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(staging, target);
  fs::remove_all(old);
}

void load_checkpoint(ParameterStore& store, const std::string& dir) {
  if (!store.allocated()) throw Error("checkpoint: cannot load into a shape-only store");
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error("checkpoint: directory " + dir + " does not exist");
  const json manifest = read_manifest(root);
  std::vector<std::pair<std::string, Shape>> entries;
  try {
    if (manifest.at("format") != "lanistr-checkpoint") throw Error("checkpoint manifest.json: wrong format");
    for (const auto& e : manifest.at("parameters")) {
      entries.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint manifest.json: ") + e.what());
  }

  std::unordered_map<std::string, std::size_t> in_file;
  for (std::size_t i = 0; i < entries.size(); ++i) in_file[entries[i].first] = i;
  std::vector<std::string> problems;
  for (const auto& p : store.params()) {
    const auto it = in_file.find(p.name);
    if (it == in_file.end()) {
      problems.push_back(p.name + " (missing from checkpoint)");
    } else if (entries[it->second].second != p.tensor.shape()) {
      problems.push_back(p.name + " (checkpoint " + shape_str(entries[it->second].second) + ", model " +
                         shape_str(p.tensor.shape()) + ")");
    }
  }
  for (const auto& [name, shape] : entries) {
    if (!store.find(name)) problems.push_back(name + " (not in model)");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint: parameter mismatch:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(msg);
  }

  const std::string blob = slurp(root / manifest.value("blob", std::string("parameters.bin")));
  std::size_t expected = 0;
  for (const auto& [name, shape] : entries) expected += 8 * numel(shape);
  if (blob.size() != expected) {
    throw Error("checkpoint: parameters.bin has " + std::to_string(blob.size()) + " bytes, expected " +
                std::to_string(expected));
  }
  std::vector<std::size_t> offsets(entries.size());
  for (std::size_t i = 0, off = 0; i < entries.size(); ++i) {
    offsets[i] = off;
    off += 8 * numel(entries[i].second);
  }
  for (auto& p : store.params()) {
    std::size_t off = offsets[in_file.at(p.name)];
    for (double& d : p.tensor.mutable_data()) {
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[off + i])) << (8 * i);
      std::memcpy(&d, &v, sizeof d);
      off += 8;
    }
  }
}

std::string checkpoint_config(const std::string& dir) {
  const json manifest = read_manifest(fs::path(dir));
  if (!manifest.contains("config") || manifest["config"].is_null()) return "";
  return manifest["config"].dump();
}

}  // namespace lanistr
