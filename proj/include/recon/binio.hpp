#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "recon/hash.hpp"
#include "recon/types.hpp"

namespace recon::detail {

static_assert(std::endian::native == std::endian::little,
              "binary containers are little-endian; big-endian hosts are unsupported");

struct ByteWriter {
  std::vector<std::uint8_t> bytes;

  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + size);
  }
  template <typename T>
  void pod(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    raw(&value, sizeof(T));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u16(std::uint16_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void i32(std::int32_t v) { pod(v); }
  void f64(double v) { pod(v); }
};

struct ByteReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void raw(void* out, std::size_t n) {
    if (pos + n > size) throw FileFormatError("container truncated");
    std::memcpy(out, data + pos, n);
    pos += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint16_t u16() { return pod<std::uint16_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  double f64() { return pod<double>(); }
  void expect_end() const {
    if (pos != size) throw FileFormatError("container has trailing bytes");
  }
};

// File layout shared by all binary containers: 8-byte magic, payload,
// 8-byte FNV-1a checksum of the payload.
inline void write_container(const std::filesystem::path& path, const char magic[8],
                            const std::vector<std::uint8_t>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileFormatError("cannot open for writing: " + path.string());
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());
  out.write(reinterpret_cast<const char*>(&checksum), 8);
  if (!out) throw FileFormatError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_container(const std::filesystem::path& path,
                                                const char magic[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileFormatError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw FileFormatError("container too short: " + path.string());
  if (std::memcmp(bytes.data(), magic, 8) != 0)
    throw FileFormatError("bad magic in " + path.string());
  const std::size_t payload_size = bytes.size() - 16;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + 8 + payload_size, 8);
  const std::uint64_t computed = fnv1a64(bytes.data() + 8, payload_size);
  if (stored != computed) throw FileFormatError("checksum mismatch in " + path.string());
  return {bytes.begin() + 8, bytes.end() - 8};
}

}  // namespace recon::detail
