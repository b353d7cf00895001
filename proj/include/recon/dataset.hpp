#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "recon/types.hpp"

namespace recon {

enum class DataSource { cifar10, cifar100_fine, synthetic };

inline const char* data_source_name(DataSource s) {
  switch (s) {
    case DataSource::cifar10: return "cifar10";
    case DataSource::cifar100_fine: return "cifar100-fine";
    default: return "synthetic";
  }
}

// A training set: one sample per row, normalized to [-1, 1] for image
// sources. Labels are class indices in [0, class_count).
template <typename Scalar>
struct Dataset {
  Matrix<Scalar> samples;
  Eigen::VectorXi labels;
  int class_count = 0;
  DataSource source = DataSource::synthetic;

  Index n() const { return samples.rows(); }
  Index dim() const { return samples.cols(); }

  void validate() const {
    if (n() < 1 || dim() < 1) throw ShapeError("dataset: needs n >= 1 and d >= 1");
    if (class_count < 2) throw ShapeError("dataset: needs at least 2 classes");
    if (labels.size() != n()) throw ShapeError("dataset: label count != sample count");
    for (Index i = 0; i < labels.size(); ++i)
      if (labels(i) < 0 || labels(i) >= class_count)
        throw CorruptRecordError("dataset: label out of range at sample " + std::to_string(i));
  }

  template <typename Other>
  Dataset<Other> cast() const {
    Dataset<Other> out;
    out.samples = samples.template cast<Other>();
    out.labels = labels;
    out.class_count = class_count;
    out.source = source;
    return out;
  }
};

// Keeps only the samples whose label is < keep_classes and sets class_count
// accordingly (CIFAR class-subset experiments train on the first C classes).
template <typename Scalar>
Dataset<Scalar> take_classes(const Dataset<Scalar>& data, int keep_classes) {
  if (keep_classes < 2 || keep_classes > data.class_count)
    throw ShapeError("take_classes: class count out of range");
  std::vector<Index> keep;
  for (Index i = 0; i < data.n(); ++i)
    if (data.labels(i) < keep_classes) keep.push_back(i);
  Dataset<Scalar> out;
  out.samples.resize(static_cast<Index>(keep.size()), data.dim());
  out.labels.resize(static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.samples.row(static_cast<Index>(i)) = data.samples.row(keep[i]);
    out.labels(static_cast<Index>(i)) = data.labels(keep[i]);
  }
  out.class_count = keep_classes;
  out.source = data.source;
  return out;
}

struct SyntheticSpec {
  int class_count = 2;
  int per_class = 10;
  int dims = 2;
  double cluster_separation = 4.0;
  double noise_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (class_count < 2) throw ConfigError("synthetic: class_count must be >= 2");
    if (per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
    if (dims < 1) throw ConfigError("synthetic: dims must be >= 1");
    if (!(cluster_separation > 0)) throw ConfigError("synthetic: cluster_separation must be > 0");
    if (noise_scale < 0) throw ConfigError("synthetic: noise_scale must be >= 0");
  }
};

// C Gaussian clusters with unit-norm mean directions scaled by
// cluster_separation, isotropic noise, entries clipped to [-1, 1].
// Deterministic per seed: mean directions are drawn first (class by class,
// coordinate order), then samples class by class, row by row. Empirically
// the result is linearly separable for cluster_separation / noise_scale
// ratios of about 10 and above at the shapes used here; the test suite
// checks this by training a linear model to zero error.
template <typename Scalar>
Dataset<Scalar> make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix<double> means(spec.class_count, spec.dims);
  for (int c = 0; c < spec.class_count; ++c) {
    Eigen::VectorXd dir(spec.dims);
    for (int j = 0; j < spec.dims; ++j) dir(j) = unit(rng);
    const double norm = dir.norm();
    if (norm > 0) dir /= norm;
    means.row(c) = spec.cluster_separation * dir.transpose();
  }

  const Index n = static_cast<Index>(spec.class_count) * spec.per_class;
  Dataset<Scalar> out;
  out.samples.resize(n, spec.dims);
  out.labels.resize(n);
  out.class_count = spec.class_count;
  out.source = DataSource::synthetic;
  Index row = 0;
  for (int c = 0; c < spec.class_count; ++c) {
    for (int k = 0; k < spec.per_class; ++k, ++row) {
      for (int j = 0; j < spec.dims; ++j) {
        const double v = means(c, j) + spec.noise_scale * unit(rng);
        out.samples(row, j) = static_cast<Scalar>(std::clamp(v, -1.0, 1.0));
      }
      out.labels(row) = c;
    }
  }
  return out;
}

// --- CIFAR binary formats ---------------------------------------------
//
// CIFAR-10: 3073-byte records, 1 label byte then 3072 pixel bytes
// (row-major 32x32 R plane, then G, then B).
// CIFAR-100: 3074-byte records, coarse label byte, fine label byte, pixels.
// Pixels are normalized byte b -> b/127.5 - 1, exactly invertible by
// rounding (serialize_cifar_pixels below).

inline constexpr Index kCifarPixels = 3072;
inline constexpr Index kCifar10Record = 3073;
inline constexpr Index kCifar100Record = 3074;

namespace detail {

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileFormatError("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

// Accepts either a single batch file or a directory holding the standard
// batch files for the given source.
inline std::vector<std::filesystem::path> cifar_input_files(const std::filesystem::path& path,
                                                            DataSource source) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw FileFormatError("no such file or directory: " + path.string());
  if (!fs::is_directory(path)) return {path};
  std::vector<fs::path> files;
  if (source == DataSource::cifar10) {
    for (int b = 1; b <= 5; ++b) {
      fs::path f = path / ("data_batch_" + std::to_string(b) + ".bin");
      if (fs::exists(f)) files.push_back(f);
    }
  } else {
    fs::path f = path / "train.bin";
    if (fs::exists(f)) files.push_back(f);
  }
  if (files.empty())
    throw FileFormatError("directory holds no recognized CIFAR batch files: " + path.string());
  return files;
}

template <typename Scalar>
Dataset<Scalar> load_cifar(const std::filesystem::path& path, DataSource source,
                           std::optional<int> limit_per_class) {
  const bool fine = source == DataSource::cifar100_fine;
  const Index record_size = fine ? kCifar100Record : kCifar10Record;
  const int class_count = fine ? 100 : 10;

  std::vector<std::uint8_t> selected;  // whole records, in file order
  std::vector<int> selected_labels;
  std::vector<int> per_class_count(static_cast<std::size_t>(class_count), 0);

  for (const auto& file : cifar_input_files(path, source)) {
    const std::vector<std::uint8_t> bytes = read_binary_file(file);
    if (bytes.empty() || bytes.size() % static_cast<std::size_t>(record_size) != 0)
      throw FileFormatError("malformed CIFAR file (size " + std::to_string(bytes.size()) +
                            " is not a multiple of " + std::to_string(record_size) +
                            "): " + file.string());
    const Index records = static_cast<Index>(bytes.size()) / record_size;
    for (Index r = 0; r < records; ++r) {
      const std::uint8_t* rec = bytes.data() + r * record_size;
      const int label = fine ? rec[1] : rec[0];
      if (label >= class_count)
        throw CorruptRecordError("corrupt CIFAR record " + std::to_string(r) + " in " +
                                 file.string() + ": label byte " + std::to_string(label));
      auto& count = per_class_count[static_cast<std::size_t>(label)];
      if (limit_per_class && count >= *limit_per_class) continue;
      ++count;
      selected.insert(selected.end(), rec + (fine ? 2 : 1), rec + record_size);
      selected_labels.push_back(label);
    }
  }

  const Index n = static_cast<Index>(selected_labels.size());
  if (n == 0) throw FileFormatError("CIFAR load selected no records: " + path.string());
  Dataset<Scalar> out;
  out.samples.resize(n, kCifarPixels);
  out.labels.resize(n);
  out.class_count = class_count;
  out.source = source;
  for (Index i = 0; i < n; ++i) {
    const std::uint8_t* px = selected.data() + i * kCifarPixels;
    for (Index j = 0; j < kCifarPixels; ++j)
      out.samples(i, j) = static_cast<Scalar>(px[j] / 127.5 - 1.0);
    out.labels(i) = selected_labels[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace detail

template <typename Scalar = double>
Dataset<Scalar> load_cifar10(const std::filesystem::path& path,
                             std::optional<int> limit_per_class = std::nullopt) {
  return detail::load_cifar<Scalar>(path, DataSource::cifar10, limit_per_class);
}

template <typename Scalar = double>
Dataset<Scalar> load_cifar100(const std::filesystem::path& path,
                              std::optional<int> limit_per_class = std::nullopt) {
  return detail::load_cifar<Scalar>(path, DataSource::cifar100_fine, limit_per_class);
}

// Inverse of the load normalization: v -> round((v + 1) * 127.5), clamped
// to a byte. Round-trips every byte value exactly.
inline std::vector<std::uint8_t> serialize_cifar_pixels(
    const Eigen::Ref<const Eigen::VectorXd>& sample) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(sample.size()));
  for (Index j = 0; j < sample.size(); ++j) {
    const double v = (sample(j) + 1.0) * 127.5;
    bytes[static_cast<std::size_t>(j)] =
        static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
  }
  return bytes;
}

}  // namespace recon
