#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irstyle/distance.hpp"
#include "irstyle/rng.hpp"
#include "irstyle/tensor.hpp"

namespace irstyle {

struct ImageRecord {
  Tensor image;  // 3 x H x W in [0, 1]
  std::optional<int> label;
  std::string source_path;
};

enum class Domain { source, target };
std::string_view to_string(Domain d);

struct DomainDataset {
  std::vector<ImageRecord> records;
  Domain domain = Domain::source;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  /// True when every record carries a label.
  bool labeled() const;
  /// Throws ErrorKind::data on out-of-range labels or pixels outside [0, 1].
  void validate() const;
};

ImageRecord load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageRecord& record, const std::filesystem::path& path);

/// Either one subdirectory per class (labels follow sorted class names) or a
/// flat directory of .ppm files (unlabeled). Records are sorted by relative
/// path. With `resolution` set every image is area-resized to it.
DomainDataset load_folder(const std::filesystem::path& root, Domain domain = Domain::source,
                          std::optional<std::size_t> resolution = std::nullopt);

/// Copy of `data` with every image area-resized to size x size.
DomainDataset resized(const DomainDataset& data, std::size_t size);

/// Stacks the selected records into a B x 3 x H x W batch (labels kept when
/// all selected records have one).
DomainBatch make_batch(const DomainDataset& data, std::span<const std::size_t> indices);

enum class BaselineKind { identity, grayscale, grayscale_invert };
std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline(std::string_view name);

ImageRecord baseline_stylize(BaselineKind kind, const ImageRecord& record);

// Stylized/real batch mixing.

struct MixRatio {
  std::size_t stylized = 1;
  std::size_t real = 7;
  bool operator==(const MixRatio&) const = default;
};

struct MixedBatch {
  DomainBatch batch;
  std::vector<bool> stylized;        // per position
  std::vector<std::size_t> origin;   // index into the stylized or real pool
};

/// One epoch of mixed batches: both pools are shuffled, then each batch takes
/// the next `ratio.stylized` stylized and `ratio.real` real records and
/// shuffles their positions. The epoch ends when either pool cannot fill
/// another batch; an error names the pool if not even one batch fits.
std::vector<MixedBatch> mix_batches(const DomainBatch& stylized, const DomainBatch& real, MixRatio ratio, Rng& rng);

}  // namespace irstyle
