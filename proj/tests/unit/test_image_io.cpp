#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "irstyle/image_io.hpp"
#include "irstyle/rng.hpp"

using namespace irstyle;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(std::string_view bytes) {
  try {
    decode_ppm(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("decoded without error");
  return ErrorKind::usage;
}

// P6 2x1: red-ish pixel then a gray one.
const std::string kTwoByOne = std::string("P6\n2 1\n255\n") + std::string("\xff\x00\x80\x10\x20\x30", 6);

}  // namespace

TEST_CASE("quantization on every code point") {
  for (int v = 0; v < 256; ++v) {
    const auto u = static_cast<std::uint8_t>(v);
    CHECK(dequantize(u) == static_cast<float>(v) / 255.0f);
    CHECK(quantize(dequantize(u)) == u);
  }
  CHECK(dequantize(255) == 1.0f);
  CHECK(dequantize(128) == doctest::Approx(0.50196).epsilon(1e-5));
}

TEST_CASE("quantize rounds half away from zero and clamps") {
  CHECK(quantize(0.5f / 255.0f) == 1);
  CHECK(quantize(0.49f / 255.0f) == 0);
  CHECK(quantize(254.6f / 255.0f) == 255);
  CHECK(quantize(-0.3f) == 0);
  CHECK(quantize(7.0f) == 255);
  CHECK_THROWS_AS(quantize(std::nanf("")), Error);
}

TEST_CASE("hand-built 2x1 file") {
  REQUIRE(kTwoByOne.size() == 17);
  const Tensor t = decode_ppm(kTwoByOne);
  REQUIRE(t.shape() == Shape{3, 1, 2});
  // Planar layout: channel-major.
  CHECK(t[0] == 1.0f);
  CHECK(t[1] == dequantize(0x10));
  CHECK(t[2] == 0.0f);
  CHECK(t[3] == dequantize(0x20));
  CHECK(t[4] == dequantize(0x80));
  CHECK(t[5] == dequantize(0x30));
  CHECK(encode_ppm(t) == kTwoByOne);
}

TEST_CASE("header comments and whitespace") {
  const std::string bytes = std::string("P6 # comment\n# another\n 2\t1\n255\n") + std::string("\xff\x00\x80\x10\x20\x30", 6);
  CHECK(decode_ppm(bytes) == decode_ppm(kTwoByOne));
}

TEST_CASE("malformed inputs") {
  CHECK(kind_of("") == ErrorKind::data);
  CHECK(kind_of("P3\n2 1\n255\n1 2 3 4 5 6\n") == ErrorKind::data);
  CHECK(kind_of("P6\n2 1\n65535\n") == ErrorKind::data);
  CHECK(kind_of("P6\n2 1\n100\n" + std::string(6, '\0')) == ErrorKind::data);
  CHECK(kind_of("P6\n2 x\n255\n") == ErrorKind::data);
  CHECK(kind_of("P6\n0 1\n255\n") == ErrorKind::data);
  CHECK(kind_of(kTwoByOne.substr(0, 16)) == ErrorKind::data);
  CHECK(kind_of("P6\n2 1\n255") == ErrorKind::data);
}

TEST_CASE("encode rejects non-images") {
  CHECK_THROWS_AS(encode_ppm(Tensor(Shape{1, 2, 2})), Error);
  CHECK_THROWS_AS(encode_ppm(Tensor(Shape{3, 2})), Error);
}

TEST_CASE("file round trip is idempotent at the u8 level") {
  const fs::path dir = fs::temp_directory_path() / "irstyle_test_image_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Tensor img(Shape{3, 5, 7});
  Rng r(2);
  for (float& v : img.data()) v = static_cast<float>(r.uniform());
  write_ppm(img, dir / "a.ppm");
  const Tensor once = read_ppm(dir / "a.ppm");
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(once[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);
  write_ppm(once, dir / "b.ppm");
  CHECK(read_file(dir / "a.ppm") == read_file(dir / "b.ppm"));
  CHECK(read_ppm(dir / "b.ppm") == once);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), Error);
  fs::remove_all(dir);
}

TEST_CASE("resize_area") {
  Tensor img(Shape{3, 4, 4});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i % 16) / 16.0f;
  const Tensor half = resize_area(img, 2);
  REQUIRE(half.shape() == Shape{3, 2, 2});
  // Top-left block: entries 0, 1, 4, 5.
  CHECK(half[0] == doctest::Approx((0 + 1 + 4 + 5) / 64.0));
  CHECK(half[3] == doctest::Approx((10 + 11 + 14 + 15) / 64.0));
  CHECK(resize_area(img, 4) == img);

  // Non-integer ratio keeps the mean of a constant image.
  Tensor flat(Shape{3, 5, 5});
  for (float& v : flat.data()) v = 0.3f;
  const Tensor small = resize_area(flat, 3);
  for (float v : small.data()) CHECK(v == doctest::Approx(0.3f));
  // Upsampling replicates.
  const Tensor up = resize_area(half, 4);
  CHECK(up[0] == half[0]);
  CHECK(up[5] == half[0]);
}
