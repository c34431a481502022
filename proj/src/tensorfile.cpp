#include "demonet/tensorfile.hpp"

#include <cstring>
#include <fstream>

#include "demonet/common.hpp"

namespace demonet::tensorfile {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'T', '1'};

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  require(f.good(), "tensorfile: truncated header in " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
void write_impl(const std::string& path, const std::vector<std::uint32_t>& shape,
                const std::vector<T>& data, std::uint8_t dtype) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  require(n == data.size(), "tensorfile: shape does not match payload for " + path);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "tensorfile: cannot write " + path);
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&dtype), 1);
  put_u32(f, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(f, d);
  // Little-endian payload; this build targets little-endian hosts.
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  require(f.good(), "tensorfile: write failed for " + path);
}

}  // namespace

void write_f32(const std::string& path, const std::vector<std::uint32_t>& shape,
               const std::vector<float>& data) {
  write_impl(path, shape, data, 0);
}

void write_f64(const std::string& path, const std::vector<std::uint32_t>& shape,
               const std::vector<double>& data) {
  write_impl(path, shape, data, 1);
}

TensorData read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "tensorfile: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, kMagic, 4) == 0,
          "tensorfile: bad magic in " + path);
  std::uint8_t dtype = 0;
  f.read(reinterpret_cast<char*>(&dtype), 1);
  require(f.good() && dtype <= 1, "tensorfile: unknown dtype in " + path);
  const std::uint32_t rank = get_u32(f, path);
  require(rank <= 16, "tensorfile: implausible rank in " + path);
  TensorData out;
  out.shape.resize(rank);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    out.shape[i] = get_u32(f, path);
    n *= out.shape[i];
  }
  if (dtype == 0) {
    out.f32.resize(n);
    f.read(reinterpret_cast<char*>(out.f32.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    out.f64.resize(n);
    f.read(reinterpret_cast<char*>(out.f64.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
  }
  require(f.good(), "tensorfile: truncated payload in " + path);
  return out;
}

}  // namespace demonet::tensorfile
