#pragma once

#include <cstddef>
#include <cstdint>

namespace recon {

// FNV-1a, 64-bit. Used for checkpoint/container checksums and manifest
// artifact hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Mixes an integer into a hash state; used to derive per-cell / per-run
// seeds from a base seed deterministically.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t payload[2] = {base, salt};
  return fnv1a64(payload, sizeof(payload));
}

}  // namespace recon
