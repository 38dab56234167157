#pragma once

// Binary PPM (P6, maxval 255) and the 8-bit quantization convention:
// u8 v <-> v / 255, quantize rounds half away from zero after clamping.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "irstyle/tensor.hpp"

namespace irstyle {

float dequantize(std::uint8_t v);
std::uint8_t quantize(float x);

/// Returns a 3 x H x W tensor in [0, 1].
Tensor decode_ppm(std::string_view bytes, std::string_view origin = "<memory>");
std::string encode_ppm(const Tensor& image);

Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const Tensor& image, const std::filesystem::path& path);

/// Area-average resize of C x H x W to C x size x size (exact mean-pooling
/// when H and W are multiples of size).
Tensor resize_area(const Tensor& image, std::size_t size);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace irstyle
