#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mcalab {

// On-disk container shared by the dataset ("MCALAB01") and checkpoint
// ("MCACKPT1") formats:
//   8-byte magic, one-line UTF-8 JSON header terminated by '\n',
//   little-endian payload arrays in manifest order, trailing CRC32 of the
//   payload (little-endian u32).
// The header holds {"meta": <caller json>, "arrays": [{name, dtype, shape,
// offset}]} with offsets relative to the payload start.

struct NamedArray {
  std::string name;
  std::string dtype;  // "f32" or "i32"
  std::vector<std::size_t> shape;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  static NamedArray floats(std::string name, std::vector<std::size_t> shape,
                           std::vector<float> data);
  static NamedArray ints(std::string name, std::vector<std::size_t> shape,
                         std::vector<std::int32_t> data);
  std::size_t count() const;
};

struct BinFile {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_binfile(const std::filesystem::path& path, const std::string& magic,
                   const nlohmann::json& meta, const std::vector<NamedArray>& arrays);

BinFile read_binfile(const std::filesystem::path& path, const std::string& expected_magic);

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t len);

}  // namespace mcalab
