#pragma once

// Synthetic two-domain generator with a known ("hidden") target policy.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "irstyle/dataset.hpp"
#include "irstyle/ops.hpp"

namespace irstyle {

struct HiddenOp {
  std::string op;
  double param = 0.0;  // physical value; ignored for ops without a parameter
  bool operator==(const HiddenOp&) const = default;
};

struct SynthSpec {
  std::size_t image_size = 32;
  std::size_t num_images = 512;
  std::size_t num_classes = 2;
  std::vector<HiddenOp> hidden_policy{{"grayscale", 0.0}, {"invert", 0.0}};
  double noise_sigma = 0.01;

  /// Throws ErrorKind::registry for unknown ops, ::usage for bad sizes.
  void validate(const OpRegistry& registry = OpRegistry::defaults()) const;
};

inline constexpr std::size_t kMaxSynthClasses = 6;
/// Shape names for class indices: disk, square, triangle, ring, cross, bar.
std::string_view synth_class_name(std::size_t c);

struct SynthDomains {
  DomainDataset source;
  DomainDataset target;
};

/// One procedural scene: uniform background plus one shape whose form, hue
/// and brightness depend on the class.
Tensor synth_scene(std::size_t size, std::size_t cls, std::size_t num_classes, Rng& rng);

/// Applies the hidden policy's hard ops in order.
Tensor apply_hidden(const SynthSpec& spec, const Tensor& image, const OpRegistry& registry = OpRegistry::defaults());

SynthDomains synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Writes <root>/source/<class>/NNNNN.ppm, <root>/target/<class>/NNNNN.ppm
/// and <root>/manifest.json.
void synth_export(const SynthDomains& domains, const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& root);

}  // namespace irstyle
