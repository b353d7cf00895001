#pragma once

#include <filesystem>

#include "recon/binio.hpp"
#include "recon/mlp.hpp"
#include "recon/types.hpp"

namespace recon {

// Checkpoint container (see docs/formats.md):
//   magic "RKCHKPT\0" | u32 version = 1 | u8 precision (4|8) | u8 0 | u16 0
//   | u32 layer_count | per layer u32 rows, u32 cols
//   | per layer raw little-endian scalars, column-major
//   | u64 FNV-1a checksum of everything after the magic.
inline constexpr char kCheckpointMagic[8] = {'R', 'K', 'C', 'H', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const MlpParams<Scalar>& params) {
  detail::ByteWriter w;
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(precision_of<Scalar>()));
  w.u8(0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(params.layer_count()));
  for (const auto& layer : params.layers) {
    w.u32(static_cast<std::uint32_t>(layer.rows()));
    w.u32(static_cast<std::uint32_t>(layer.cols()));
  }
  for (const auto& layer : params.layers)
    w.raw(layer.data(), static_cast<std::size_t>(layer.size()) * sizeof(Scalar));
  detail::write_container(path, kCheckpointMagic, w.bytes);
}

// Peek at the stored precision without loading the weights.
inline Precision checkpoint_precision(const std::filesystem::path& path) {
  const auto payload = detail::read_container(path, kCheckpointMagic);
  detail::ByteReader r{payload.data(), payload.size()};
  if (r.u32() != kCheckpointVersion) throw FileFormatError("unsupported checkpoint version");
  const std::uint8_t prec = r.u8();
  if (prec != 4 && prec != 8) throw FileFormatError("unknown precision flag in checkpoint");
  return static_cast<Precision>(prec);
}

template <typename Scalar>
MlpParams<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const auto payload = detail::read_container(path, kCheckpointMagic);
  detail::ByteReader r{payload.data(), payload.size()};
  if (r.u32() != kCheckpointVersion) throw FileFormatError("unsupported checkpoint version");
  const std::uint8_t prec = r.u8();
  r.u8();
  r.u16();
  if (prec != static_cast<std::uint8_t>(precision_of<Scalar>()))
    throw FileFormatError("checkpoint precision is " +
                          std::string(precision_name(static_cast<Precision>(prec))) +
                          "; load with the matching scalar type");
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0) throw FileFormatError("checkpoint has no layers");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(layer_count);
  for (auto& [rows, cols] : shapes) {
    rows = r.u32();
    cols = r.u32();
    if (rows == 0 || cols == 0) throw FileFormatError("checkpoint layer with zero dimension");
  }
  MlpParams<Scalar> params;
  for (const auto& [rows, cols] : shapes) {
    Matrix<Scalar> layer(rows, cols);
    r.raw(layer.data(), static_cast<std::size_t>(layer.size()) * sizeof(Scalar));
    params.layers.push_back(std::move(layer));
  }
  r.expect_end();
  // adjacent layers must chain
  for (std::size_t k = 0; k + 1 < params.layers.size(); ++k)
    if (params.layers[k].cols() != params.layers[k + 1].rows())
      throw FileFormatError("checkpoint layer shapes do not chain");
  return params;
}

}  // namespace recon
