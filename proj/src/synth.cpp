#include "irstyle/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "irstyle/image_io.hpp"

namespace irstyle {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, kMaxSynthClasses> kShapeNames{"disk", "square", "triangle", "ring", "cross", "bar"};

bool inside(std::size_t shape, double dx, double dy, double r) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 2: return dy <= 0.7 * r && dy >= -r + 2.0 * ax;
    case 3: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case 4: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    default: return ax <= r && ay <= 0.35 * r;
  }
}

// HSV with full value and fixed saturation, then scaled by `value`.
std::array<double, 3> hue_rgb(double hue, double sat, double value) {
  hue -= std::floor(hue);
  std::array<double, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    const double k = std::fmod(5.0 - 2.0 * static_cast<double>(c) + hue * 6.0, 6.0);
    const double f = std::clamp(std::min(k, 4.0 - k), 0.0, 1.0);
    rgb[c] = value * (1.0 - sat * f);
  }
  return rgb;
}

}  // namespace

std::string_view synth_class_name(std::size_t c) {
  if (c >= kMaxSynthClasses) fail(ErrorKind::usage, "synthetic class index out of range");
  return kShapeNames[c];
}

void SynthSpec::validate(const OpRegistry& registry) const {
  if (image_size < 8) fail(ErrorKind::usage, "synthetic image size must be at least 8");
  if (num_images < 1) fail(ErrorKind::usage, "synthetic dataset needs at least one image");
  if (num_classes < 1 || num_classes > kMaxSynthClasses) {
    fail(ErrorKind::usage, "synthetic class count must be in [1, " + std::to_string(kMaxSynthClasses) + "]");
  }
  if (!(noise_sigma >= 0.0)) fail(ErrorKind::usage, "noise sigma must be non-negative");
  for (const HiddenOp& h : hidden_policy) {
    const auto id = registry.find(h.op);
    if (!id) fail(ErrorKind::registry, "hidden policy op '" + h.op + "' is not in the registry");
    const OpDescriptor& d = registry.at(*id);
    if (d.has_param && !(h.param >= d.param_lo && h.param <= d.param_hi)) {
      fail(ErrorKind::usage, "hidden policy parameter for '" + h.op + "' outside [" + std::to_string(d.param_lo) + ", " +
                                 std::to_string(d.param_hi) + "]");
    }
  }
}

Tensor synth_scene(std::size_t size, std::size_t cls, std::size_t num_classes, Rng& rng) {
  Tensor img(Shape{3, size, size});
  const double bg = rng.uniform(0.15, 0.3);
  std::array<double, 3> bg_rgb{};
  for (double& v : bg_rgb) v = std::clamp(bg + rng.uniform(-0.03, 0.03), 0.0, 1.0);

  const double level = num_classes > 1 ? static_cast<double>(cls) / static_cast<double>(num_classes - 1) : 0.5;
  const double hue = static_cast<double>(cls) / static_cast<double>(num_classes) + rng.uniform(-0.04, 0.04);
  const double value = 0.5 + 0.4 * level + rng.uniform(-0.05, 0.05);
  const auto fg = hue_rgb(hue, 0.6, value);

  const auto s = static_cast<double>(size);
  const double cx = rng.uniform(0.35, 0.65) * s;
  const double cy = rng.uniform(0.35, 0.65) * s;
  const double r = rng.uniform(0.2, 0.3) * s;
  const std::size_t hw = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const bool in = inside(cls, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
      for (std::size_t c = 0; c < 3; ++c) img[c * hw + y * size + x] = static_cast<float>(in ? fg[c] : bg_rgb[c]);
    }
  }
  return img;
}

Tensor apply_hidden(const SynthSpec& spec, const Tensor& image, const OpRegistry& registry) {
  Tensor x = image;
  for (const HiddenOp& h : spec.hidden_policy) {
    const auto id = registry.find(h.op);
    if (!id) fail(ErrorKind::registry, "hidden policy op '" + h.op + "' is not in the registry");
    const OpDescriptor& d = registry.at(*id);
    x = apply_hard(registry, *id, x, d.has_param ? param_unmap(d, h.param) : 0.0);
  }
  return x;
}

SynthDomains synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  const OpRegistry registry = OpRegistry::defaults();
  spec.validate(registry);
  SynthDomains out;
  out.source.domain = Domain::source;
  out.target.domain = Domain::target;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    out.source.class_names.emplace_back(synth_class_name(c));
  }
  out.target.class_names = out.source.class_names;

  Rng src_rng(derive_seed(seed, "synth-source"));
  Rng tgt_rng(derive_seed(seed, "synth-target"));
  Rng noise_rng(derive_seed(seed, "synth-noise"));
  char name[32];
  for (std::size_t i = 0; i < spec.num_images; ++i) {
    const std::size_t cls = static_cast<std::size_t>(src_rng.below(spec.num_classes));
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    out.source.records.push_back(ImageRecord{synth_scene(spec.image_size, cls, spec.num_classes, src_rng),
                                             static_cast<int>(cls),
                                             "source/" + std::string(synth_class_name(cls)) + "/" + name});
  }
  for (std::size_t i = 0; i < spec.num_images; ++i) {
    const std::size_t cls = static_cast<std::size_t>(tgt_rng.below(spec.num_classes));
    Tensor img = apply_hidden(spec, synth_scene(spec.image_size, cls, spec.num_classes, tgt_rng), registry);
    if (spec.noise_sigma > 0.0) {
      for (float& v : img.data()) {
        v = std::clamp(static_cast<float>(v + spec.noise_sigma * noise_rng.normal()), 0.0f, 1.0f);
      }
    }
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    out.target.records.push_back(ImageRecord{std::move(img), static_cast<int>(cls),
                                             "target/" + std::string(synth_class_name(cls)) + "/" + name});
  }
  return out;
}

void synth_export(const SynthDomains& domains, const SynthSpec& spec, std::uint64_t seed, const fs::path& root) {
  using nlohmann::json;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorKind::data, "cannot create " + root.string() + ": " + ec.message());
  json manifest;
  manifest["seed"] = seed;
  manifest["image_size"] = spec.image_size;
  manifest["num_images"] = spec.num_images;
  manifest["num_classes"] = spec.num_classes;
  manifest["noise_sigma"] = spec.noise_sigma;
  manifest["class_names"] = domains.source.class_names;
  json hidden = json::array();
  for (const HiddenOp& h : spec.hidden_policy) hidden.push_back({{"op", h.op}, {"param", h.param}});
  manifest["hidden_policy"] = hidden;
  for (const DomainDataset* d : {&domains.source, &domains.target}) {
    json records = json::array();
    for (const ImageRecord& r : d->records) {
      const fs::path path = root / r.source_path;
      fs::create_directories(path.parent_path(), ec);
      if (ec) fail(ErrorKind::data, "cannot create " + path.parent_path().string() + ": " + ec.message());
      save_ppm(r, path);
      json rec{{"path", r.source_path}};
      rec["label"] = r.label ? json(*r.label) : json(nullptr);
      records.push_back(std::move(rec));
    }
    manifest[std::string(to_string(d->domain))] = std::move(records);
  }
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace irstyle
