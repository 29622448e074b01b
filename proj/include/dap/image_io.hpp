#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dap/tensor.hpp"

namespace dap {

/// 8-bit RGB PNG encoding of an H×W×3 tensor with values in [0, 1]. Values
/// are rounded to the nearest multiple of 1/255, so renders (which are
/// already quantized) round-trip exactly.
std::vector<std::uint8_t> encode_png(const Tensor& image);
Tensor decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& file, const Tensor& image);
Tensor read_png(const std::filesystem::path& file);

}  // namespace dap
