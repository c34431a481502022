#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace demonet::tensorfile {

// Portable tensor file: magic "DNT1", dtype u8 (0 = f32, 1 = f64), rank u32
// little-endian, u32 dims, then the row-major payload (little-endian).
struct TensorData {
  std::vector<std::uint32_t> shape;
  std::vector<float> f32;    // exactly one of f32/f64 is populated
  std::vector<double> f64;
  bool is_f64() const { return !f64.empty() || (f32.empty() && shape_numel() == 0); }
  std::size_t shape_numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
};

void write_f32(const std::string& path, const std::vector<std::uint32_t>& shape,
               const std::vector<float>& data);
void write_f64(const std::string& path, const std::vector<std::uint32_t>& shape,
               const std::vector<double>& data);
TensorData read(const std::string& path);

}  // namespace demonet::tensorfile
