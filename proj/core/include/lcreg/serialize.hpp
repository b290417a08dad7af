#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcreg/tensor.hpp"

namespace lcreg {

// Binary tensor file ("LCT1"):
//   4 bytes  magic "LCT1"
//   u32      rank
//   u64[rank] dims
//   f64[]    row-major payload
// All integers and floats little-endian.

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace lcreg
