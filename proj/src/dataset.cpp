#include "irstyle/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "irstyle/image_io.hpp"

namespace irstyle {

namespace fs = std::filesystem;

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

bool DomainDataset::labeled() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const ImageRecord& r) { return r.label.has_value(); });
}

void DomainDataset::validate() const {
  for (const ImageRecord& r : records) {
    if (r.label && (*r.label < 0 || static_cast<std::size_t>(*r.label) >= class_names.size())) {
      fail(ErrorKind::data, r.source_path + ": label " + std::to_string(*r.label) + " outside " +
                                std::to_string(class_names.size()) + " classes");
    }
    for (float v : r.image.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::data, r.source_path + ": pixel outside [0, 1]");
    }
  }
}

ImageRecord load_ppm(const fs::path& path) { return ImageRecord{read_ppm(path), std::nullopt, path.string()}; }

void save_ppm(const ImageRecord& record, const fs::path& path) { write_ppm(record.image, path); }

namespace {

bool is_ppm(const fs::directory_entry& e) {
  if (!e.is_regular_file()) return false;
  std::string ext = e.path().extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".ppm";
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (is_ppm(e)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

DomainDataset load_folder(const fs::path& root, Domain domain, std::optional<std::size_t> resolution) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) fail(ErrorKind::data, "dataset root is not a directory: " + root.string());
  DomainDataset data;
  data.domain = domain;

  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  std::vector<std::pair<fs::path, std::optional<int>>> files;
  const std::vector<fs::path> flat = sorted_files(root);
  if (!class_dirs.empty() && flat.empty()) {
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
      data.class_names.push_back(class_dirs[c].filename().string());
      for (const fs::path& f : sorted_files(class_dirs[c])) files.emplace_back(f, static_cast<int>(c));
    }
  } else {
    for (const fs::path& f : flat) files.emplace_back(f, std::nullopt);
  }
  if (files.empty()) fail(ErrorKind::data, "no .ppm images under " + root.string());

  std::vector<std::string> offenders;
  std::string first_reason;
  for (const auto& [path, label] : files) {
    try {
      ImageRecord r = load_ppm(path);
      r.label = label;
      if (resolution) r.image = resize_area(r.image, *resolution);
      data.records.push_back(std::move(r));
    } catch (const Error& e) {
      if (first_reason.empty()) first_reason = e.what();
      offenders.push_back(path.string());
    }
  }
  if (!offenders.empty()) {
    std::string list;
    for (const std::string& o : offenders) list += (list.empty() ? "" : ", ") + o;
    fail(ErrorKind::data, "unreadable images (" + std::to_string(offenders.size()) + "): " + list + "; first error: " + first_reason);
  }
  return data;
}

DomainDataset resized(const DomainDataset& data, std::size_t size) {
  DomainDataset out = data;
  for (ImageRecord& r : out.records) r.image = resize_area(r.image, size);
  return out;
}

DomainBatch make_batch(const DomainDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::usage, "make_batch: empty selection");
  const Shape& s = data.records.at(indices[0]).image.shape();
  const std::size_t per = shape_numel(s);
  Tensor images(Shape{indices.size(), s[0], s[1], s[2]});
  std::vector<int> labels;
  bool all_labeled = true;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const ImageRecord& r = data.records.at(indices[i]);
    if (r.image.shape() != s) {
      fail(ErrorKind::data, r.source_path + ": image shape " + shape_string(r.image.shape()) + " differs from " + shape_string(s));
    }
    std::memcpy(images.raw() + i * per, r.image.raw(), per * sizeof(float));
    if (r.label) {
      labels.push_back(*r.label);
    } else {
      all_labeled = false;
    }
  }
  DomainBatch b{std::move(images), std::nullopt};
  if (all_labeled) b.labels = std::move(labels);
  return b;
}

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::identity: return "identity";
    case BaselineKind::grayscale: return "grayscale";
    case BaselineKind::grayscale_invert: return "grayscale-invert";
  }
  return "unknown";
}

BaselineKind parse_baseline(std::string_view name) {
  for (BaselineKind k : {BaselineKind::identity, BaselineKind::grayscale, BaselineKind::grayscale_invert}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorKind::usage, "unknown baseline kind '" + std::string(name) + "' (identity, grayscale, grayscale-invert)");
}

ImageRecord baseline_stylize(BaselineKind kind, const ImageRecord& record) {
  const Tensor& x = record.image;
  if (x.rank() != 3 || x.dim(0) != 3) fail(ErrorKind::shape, "baseline expects 3 x H x W, got " + shape_string(x.shape()));
  ImageRecord out = record;
  if (kind == BaselineKind::identity) return out;
  const std::size_t hw = x.dim(1) * x.dim(2);
  for (std::size_t i = 0; i < hw; ++i) {
    const double acc = static_cast<double>(x[i]) + x[hw + i] + x[2 * hw + i];
    auto m = static_cast<float>(acc / 3.0);
    if (kind == BaselineKind::grayscale_invert) m = 1.0f - m;
    out.image[i] = out.image[hw + i] = out.image[2 * hw + i] = m;
  }
  return out;
}

std::vector<MixedBatch> mix_batches(const DomainBatch& stylized, const DomainBatch& real, MixRatio ratio, Rng& rng) {
  const std::size_t size = ratio.stylized + ratio.real;
  if (size == 0) fail(ErrorKind::usage, "mix ratio must select at least one record");
  const std::size_t ns = stylized.size();
  const std::size_t nr = real.size();
  if (ratio.stylized > ns) {
    fail(ErrorKind::data, "stylized pool exhausted: need " + std::to_string(ratio.stylized) + ", have " + std::to_string(ns));
  }
  if (ratio.real > nr) {
    fail(ErrorKind::data, "real pool exhausted: need " + std::to_string(ratio.real) + ", have " + std::to_string(nr));
  }
  Shape image_shape;
  if (ratio.stylized > 0) image_shape.assign(stylized.images.shape().begin() + 1, stylized.images.shape().end());
  if (ratio.real > 0) {
    Shape rs(real.images.shape().begin() + 1, real.images.shape().end());
    if (!image_shape.empty() && rs != image_shape) fail(ErrorKind::shape, "stylized and real images differ in shape");
    image_shape = rs;
  }
  const std::size_t per = shape_numel(image_shape);
  const bool labeled = (ratio.stylized == 0 || stylized.labels) && (ratio.real == 0 || real.labels);

  std::vector<std::size_t> s_order(ns), r_order(nr);
  std::iota(s_order.begin(), s_order.end(), std::size_t{0});
  std::iota(r_order.begin(), r_order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(s_order));
  rng.shuffle(std::span<std::size_t>(r_order));

  std::size_t batches = SIZE_MAX;
  if (ratio.stylized > 0) batches = std::min(batches, ns / ratio.stylized);
  if (ratio.real > 0) batches = std::min(batches, nr / ratio.real);

  std::vector<MixedBatch> out;
  out.reserve(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::pair<bool, std::size_t>> picks;
    for (std::size_t i = 0; i < ratio.stylized; ++i) picks.emplace_back(true, s_order[b * ratio.stylized + i]);
    for (std::size_t i = 0; i < ratio.real; ++i) picks.emplace_back(false, r_order[b * ratio.real + i]);
    rng.shuffle(std::span<std::pair<bool, std::size_t>>(picks));

    Shape bs{size};
    bs.insert(bs.end(), image_shape.begin(), image_shape.end());
    MixedBatch mb;
    mb.batch.images = Tensor(bs);
    std::vector<int> labels;
    for (std::size_t i = 0; i < size; ++i) {
      const auto [is_styl, idx] = picks[i];
      const DomainBatch& pool = is_styl ? stylized : real;
      std::memcpy(mb.batch.images.raw() + i * per, pool.images.raw() + idx * per, per * sizeof(float));
      if (labeled) labels.push_back((*pool.labels)[idx]);
      mb.stylized.push_back(is_styl);
      mb.origin.push_back(idx);
    }
    if (labeled) mb.batch.labels = std::move(labels);
    out.push_back(std::move(mb));
  }
  return out;
}

}  // namespace irstyle
