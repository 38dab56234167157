#include "irstyle/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace irstyle {

float dequantize(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

std::uint8_t quantize(float x) {
  if (std::isnan(x)) fail(ErrorKind::numeric, "cannot quantize NaN");
  const double c = std::clamp(static_cast<double>(x), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(std::string_view bytes, std::size_t& pos, std::string_view origin) {
  while (pos < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(c)) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
  if (start == pos) fail(ErrorKind::data, std::string(origin) + ": malformed PPM header (unexpected end)");
  return std::string(bytes.substr(start, pos - start));
}

std::size_t header_number(std::string_view bytes, std::size_t& pos, std::string_view origin, std::string_view what) {
  const std::string tok = header_token(bytes, pos, origin);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    fail(ErrorKind::data, std::string(origin) + ": malformed PPM header (" + std::string(what) + " '" + tok + "')");
  }
  return static_cast<std::size_t>(std::stoul(tok));
}

}  // namespace

Tensor decode_ppm(std::string_view bytes, std::string_view origin) {
  std::size_t pos = 0;
  if (header_token(bytes, pos, origin) != "P6") {
    fail(ErrorKind::data, std::string(origin) + ": not a binary PPM (expected magic P6)");
  }
  const std::size_t w = header_number(bytes, pos, origin, "width");
  const std::size_t h = header_number(bytes, pos, origin, "height");
  const std::size_t maxval = header_number(bytes, pos, origin, "maxval");
  if (w == 0 || h == 0) fail(ErrorKind::data, std::string(origin) + ": PPM has zero size");
  if (maxval != 255) {
    fail(ErrorKind::data, std::string(origin) + ": unsupported PPM maxval " + std::to_string(maxval) + " (need 255)");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail(ErrorKind::data, std::string(origin) + ": malformed PPM header (missing separator)");
  }
  ++pos;
  const std::size_t hw = w * h;
  if (bytes.size() - pos < 3 * hw) {
    fail(ErrorKind::data, std::string(origin) + ": truncated PPM payload (" + std::to_string(bytes.size() - pos) +
                              " of " + std::to_string(3 * hw) + " bytes)");
  }
  Tensor img(Shape{3, h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * hw + i] = dequantize(static_cast<std::uint8_t>(bytes[pos + 3 * i + c]));
    }
  }
  return img;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    fail(ErrorKind::shape, "encode_ppm expects 3 x H x W, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const std::size_t hw = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[header + 3 * i + c] = static_cast<char>(quantize(image[c * hw + i]));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::data, "error reading " + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::data, "error writing " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path), path.string()); }

void write_ppm(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_ppm(image)); }

Tensor resize_area(const Tensor& image, std::size_t size) {
  if (image.rank() != 3) fail(ErrorKind::shape, "resize_area expects C x H x W, got " + shape_string(image.shape()));
  if (size == 0) fail(ErrorKind::usage, "resize_area: size must be positive");
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (h == size && w == size) return image;
  // Separable box filter: output cell [i, i+1) covers input [i*h/size, (i+1)*h/size).
  auto weights = [size](std::size_t in) {
    std::vector<std::vector<std::pair<std::size_t, double>>> out(size);
    const double scale = static_cast<double>(in) / static_cast<double>(size);
    for (std::size_t o = 0; o < size; ++o) {
      const double lo = static_cast<double>(o) * scale;
      const double hi = static_cast<double>(o + 1) * scale;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
        const double cover = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (cover > 0.0) out[o].emplace_back(i, cover / scale);
      }
    }
    return out;
  };
  const auto wy = weights(h);
  const auto wx = weights(w);
  Tensor out(Shape{c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = image.raw() + ch * h * w;
    for (std::size_t oy = 0; oy < size; ++oy) {
      for (std::size_t ox = 0; ox < size; ++ox) {
        double acc = 0.0;
        for (const auto& [iy, fy] : wy[oy]) {
          for (const auto& [ix, fx] : wx[ox]) acc += fy * fx * src[iy * w + ix];
        }
        out[(ch * size + oy) * size + ox] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace irstyle
