#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace recon {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Read-only argument views that bind any compatible expression. The scalar
// sits in a non-deduced position so it is inferred from the other
// arguments (usually the MlpParams), not from the expression.
template <typename Scalar>
using VecRef = Eigen::Ref<const Vector<std::type_identity_t<Scalar>>>;

template <typename Scalar>
using MatRef = Eigen::Ref<const Matrix<std::type_identity_t<Scalar>>>;

enum class Precision : std::uint8_t { f32 = 4, f64 = 8 };

inline const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

template <typename Scalar>
constexpr Precision precision_of() {
  static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8);
  return sizeof(Scalar) == 4 ? Precision::f32 : Precision::f64;
}

// Shape or dimensionality mismatch between an input and what an operation
// requires.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File does not match the documented binary layout (truncated, bad magic,
// bad checksum, size not a record multiple).
struct FileFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A record parsed fine structurally but carries an impossible value
// (e.g. a label outside [0, C)).
struct CorruptRecordError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An iterative routine produced a non-finite value; message names the step.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace recon
