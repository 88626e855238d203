#include "mcalab/binfile.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "mcalab/errors.hpp"

namespace mcalab {

namespace {

std::size_t shape_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void append_le32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

}  // namespace

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t len) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(len)));
}

NamedArray NamedArray::floats(std::string name, std::vector<std::size_t> shape,
                              std::vector<float> data) {
  if (shape_count(shape) != data.size())
    throw InvalidShapeError("array '" + name + "': shape does not match data length");
  NamedArray a;
  a.name = std::move(name);
  a.dtype = "f32";
  a.shape = std::move(shape);
  a.f32 = std::move(data);
  return a;
}

NamedArray NamedArray::ints(std::string name, std::vector<std::size_t> shape,
                            std::vector<std::int32_t> data) {
  if (shape_count(shape) != data.size())
    throw InvalidShapeError("array '" + name + "': shape does not match data length");
  NamedArray a;
  a.name = std::move(name);
  a.dtype = "i32";
  a.shape = std::move(shape);
  a.i32 = std::move(data);
  return a;
}

std::size_t NamedArray::count() const { return shape_count(shape); }

const NamedArray& BinFile::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("missing array '" + name + "'");
}

bool BinFile::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_binfile(const std::filesystem::path& path, const std::string& magic,
                   const nlohmann::json& meta, const std::vector<NamedArray>& arrays) {
  if (magic.size() != 8) throw ContractError("magic must be 8 bytes");

  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& a : arrays) {
    nlohmann::json entry;
    entry["name"] = a.name;
    entry["dtype"] = a.dtype;
    entry["shape"] = a.shape;
    entry["offset"] = payload.size();
    manifest.push_back(entry);
    if (a.dtype == "f32") {
      for (float v : a.f32) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        append_le32(payload, bits);
      }
    } else if (a.dtype == "i32") {
      for (std::int32_t v : a.i32) append_le32(payload, static_cast<std::uint32_t>(v));
    } else {
      throw ContractError("unknown dtype '" + a.dtype + "'");
    }
  }

  nlohmann::json header;
  header["meta"] = meta;
  header["arrays"] = manifest;
  std::string header_line = header.dump();
  header_line.push_back('\n');

  std::string crc;
  append_le32(crc, crc32_bytes(reinterpret_cast<const unsigned char*>(payload.data()),
                               payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(magic.data(), 8);
  out.write(header_line.data(), static_cast<std::streamsize>(header_line.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(crc.data(), 4);
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

BinFile read_binfile(const std::filesystem::path& path, const std::string& expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 8 || bytes.compare(0, 8, expected_magic) != 0)
    throw FormatError("bad magic at offset 0 (expected '" + expected_magic + "')");
  std::size_t nl = bytes.find('\n', 8);
  if (nl == std::string::npos) throw FormatError("unterminated header (no newline after offset 8)");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, nl - 8));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header JSON: ") + e.what());
  }
  if (!header.contains("meta") || !header.contains("arrays"))
    throw FormatError("header missing 'meta' or 'arrays'");

  std::size_t payload_start = nl + 1;
  if (bytes.size() < payload_start + 4) throw FormatError("file truncated before checksum");
  std::size_t payload_len = bytes.size() - payload_start - 4;
  const unsigned char* payload =
      reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start;

  // Truncation is detected from the manifest before the CRC is compared, so
  // a cut-off file reports the array it was cut inside of.
  for (const auto& entry : header["arrays"]) {
    std::size_t n = 1;
    for (std::size_t d : entry.at("shape").get<std::vector<std::size_t>>()) n *= d;
    std::size_t end = entry.at("offset").get<std::size_t>() + n * 4;
    if (end > payload_len)
      throw FormatError("file truncated inside array '" +
                        entry.at("name").get<std::string>() + "'");
  }

  std::uint32_t stored = 0;
  for (int i = 3; i >= 0; --i)
    stored = (stored << 8) | static_cast<unsigned char>(bytes[payload_start + payload_len + i]);
  std::uint32_t actual = crc32_bytes(payload, payload_len);
  if (stored != actual)
    throw FormatError("checksum mismatch at offset " + std::to_string(payload_start + payload_len));

  BinFile file;
  file.meta = header["meta"];
  for (const auto& entry : header["arrays"]) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.dtype = entry.at("dtype").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t offset = entry.at("offset").get<std::size_t>();
    std::size_t n = a.count();
    if (a.dtype == "f32") {
      a.f32.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | payload[offset + i * 4 + b];
        std::memcpy(&a.f32[i], &bits, 4);
      }
    } else if (a.dtype == "i32") {
      a.i32.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | payload[offset + i * 4 + b];
        a.i32[i] = static_cast<std::int32_t>(bits);
      }
    } else {
      throw FormatError("unknown dtype '" + a.dtype + "' for array '" + a.name + "'");
    }
    file.arrays.push_back(std::move(a));
  }
  return file;
}

}  // namespace mcalab
