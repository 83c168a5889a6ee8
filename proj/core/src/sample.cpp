#include "lanistr/sample.hpp"

#include "lanistr/tensor.hpp"

namespace lanistr {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kText:
      return "text";
    case Modality::kImage:
      return "image";
    case Modality::kTabular:
      return "tabular";
    case Modality::kTimeSeries:
      return "timeseries";
  }
  return "unknown";
}

Modality parse_modality(std::string_view name) {
  for (Modality m : kAllModalities) {
    if (modality_name(m) == name) return m;
  }
  throw Error("unknown modality '" + std::string(name) + "'");
}

std::string presence_str(const ModalitySet& set) {
  std::string out;
  for (Modality m : kAllModalities) {
    if (!set[index_of(m)]) continue;
    if (!out.empty()) out += '+';
    out += modality_name(m);
  }
  return out.empty() ? "none" : out;
}

bool MultimodalSample::present(Modality m) const {
  switch (m) {
    case Modality::kText:
      return text.has_value();
    case Modality::kImage:
      return image.has_value();
    case Modality::kTabular:
      return tabular.has_value();
    case Modality::kTimeSeries:
      return timeseries.has_value();
  }
  return false;
}

ModalitySet MultimodalSample::presence() const {
  ModalitySet s{};
  for (Modality m : kAllModalities) s[index_of(m)] = present(m);
  return s;
}

std::size_t MultimodalSample::present_count() const {
  std::size_t n = 0;
  for (Modality m : kAllModalities) n += present(m) ? 1 : 0;
  return n;
}

void MultimodalSample::drop(Modality m) {
  switch (m) {
    case Modality::kText:
      text.reset();
      break;
    case Modality::kImage:
      image.reset();
      masked_patches.clear();
      break;
    case Modality::kTabular:
      tabular.reset();
      tabular_visibility.clear();
      break;
    case Modality::kTimeSeries:
      timeseries.reset();
      break;
  }
}

namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

}  // namespace lanistr
