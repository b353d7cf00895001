#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "recon/types.hpp"

namespace recon {

enum class InitKind { standard, small_first_layer };

inline const char* init_kind_name(InitKind k) {
  return k == InitKind::standard ? "standard" : "small_first_layer";
}

// Gaussian fan-in initialization. Entry variance of layer k is
// fan_in^-e with e = 1 everywhere for `standard`, and e =
// first_layer_exponent (default 1.5) on the first layer for
// `small_first_layer`.
struct InitScheme {
  InitKind kind = InitKind::standard;
  double first_layer_exponent = 1.5;
  std::uint64_t seed = 0;

  double exponent_for_layer(Index layer) const {
    if (kind == InitKind::small_first_layer && layer == 0) return first_layer_exponent;
    return 1.0;
  }
};

// Weights of a bias-free ReLU MLP. layers[k] has shape fan_in x fan_out and
// acts as z = W^T a, so a batch with samples as rows maps through X * W.
// No bias terms anywhere: the network is positively homogeneous of degree
// L (= layer count) in the flattened parameter vector theta.
template <typename Scalar>
struct MlpParams {
  std::vector<Matrix<Scalar>> layers;

  Index layer_count() const { return static_cast<Index>(layers.size()); }
  Index input_dim() const { return layers.front().rows(); }
  Index output_dim() const { return layers.back().cols(); }

  Index param_count() const {
    Index p = 0;
    for (const auto& w : layers) p += w.size();
    return p;
  }

  std::vector<Index> dims() const {
    std::vector<Index> d;
    d.push_back(layers.front().rows());
    for (const auto& w : layers) d.push_back(w.cols());
    return d;
  }

  // Flattened theta: layers in order, column-major within each layer.
  Vector<Scalar> flatten() const {
    Vector<Scalar> theta(param_count());
    Index off = 0;
    for (const auto& w : layers) {
      theta.segment(off, w.size()) = Eigen::Map<const Vector<Scalar>>(w.data(), w.size());
      off += w.size();
    }
    return theta;
  }

  static MlpParams unflatten(const Vector<Scalar>& theta, const std::vector<Index>& dims) {
    if (dims.size() < 2) throw ShapeError("unflatten: dims needs at least 2 entries");
    MlpParams out;
    Index off = 0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      Matrix<Scalar> w(dims[k], dims[k + 1]);
      if (off + w.size() > theta.size()) throw ShapeError("unflatten: theta too short for dims");
      Eigen::Map<Vector<Scalar>>(w.data(), w.size()) = theta.segment(off, w.size());
      off += w.size();
      out.layers.push_back(std::move(w));
    }
    if (off != theta.size()) throw ShapeError("unflatten: theta length does not match dims");
    return out;
  }

  template <typename Other>
  MlpParams<Other> cast() const {
    MlpParams<Other> out;
    out.layers.reserve(layers.size());
    for (const auto& w : layers) out.layers.push_back(w.template cast<Other>());
    return out;
  }
};

template <typename Scalar>
MlpParams<Scalar> init_params(const InitScheme& scheme, const std::vector<Index>& dims) {
  if (dims.size() < 2) throw ShapeError("init_params: dims needs at least 2 entries");
  for (Index d : dims)
    if (d < 1) throw ShapeError("init_params: all layer sizes must be >= 1");
  std::mt19937_64 rng(scheme.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  MlpParams<Scalar> params;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const Index fan_in = dims[k];
    const Index fan_out = dims[k + 1];
    const double stddev =
        std::pow(static_cast<double>(fan_in), -0.5 * scheme.exponent_for_layer(static_cast<Index>(k)));
    Matrix<Scalar> w(fan_in, fan_out);
    // Column-major fill order; draws are always taken in double so the f32
    // and f64 schemes share one stream.
    Scalar* data = w.data();
    for (Index i = 0; i < w.size(); ++i) data[i] = static_cast<Scalar>(stddev * unit(rng));
    params.layers.push_back(std::move(w));
  }
  return params;
}

namespace detail {

template <typename Scalar>
void check_input_shape(const MlpParams<Scalar>& params, Index xdim) {
  if (params.layers.empty()) throw ShapeError("mlp: no layers");
  if (xdim != params.input_dim())
    throw ShapeError("mlp: input has dim " + std::to_string(xdim) + ", expected " +
                     std::to_string(params.input_dim()));
}

// Single-sample forward pass keeping post-activation values. The ReLU mask
// of layer k is recovered as post[k] > 0 (ReLU'(0) := 0, so an exact zero
// counts as inactive).
template <typename Scalar>
struct ForwardTrace {
  Vector<Scalar> input;
  std::vector<Vector<Scalar>> post;  // post[k] = relu(z_{k+1}), k = 0..L-2
  Vector<Scalar> logits;
};

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const MlpParams<Scalar>& params,
                                   const VecRef<Scalar>& x) {
  check_input_shape(params, x.size());
  ForwardTrace<Scalar> trace;
  trace.input = x;
  Vector<Scalar> act = x;
  const Index L = params.layer_count();
  for (Index k = 0; k < L; ++k) {
    Vector<Scalar> z = params.layers[static_cast<std::size_t>(k)].transpose() * act;
    if (k + 1 == L) {
      trace.logits = std::move(z);
    } else {
      act = z.cwiseMax(Scalar(0));
      trace.post.push_back(act);
    }
  }
  return trace;
}

// Reverse-mode gradient of <cotangent, logits> with respect to every layer
// weight. Returns one matrix per layer, shaped like the layer.
template <typename Scalar>
std::vector<Matrix<Scalar>> grad_theta_from_trace(const MlpParams<Scalar>& params,
                                                  const ForwardTrace<Scalar>& trace,
                                                  const Vector<Scalar>& cotangent) {
  const Index L = params.layer_count();
  std::vector<Matrix<Scalar>> grads(static_cast<std::size_t>(L));
  Vector<Scalar> dz = cotangent;
  for (Index k = L - 1; k >= 0; --k) {
    const auto& w = params.layers[static_cast<std::size_t>(k)];
    const Vector<Scalar>& below = (k == 0) ? trace.input : trace.post[static_cast<std::size_t>(k - 1)];
    grads[static_cast<std::size_t>(k)].noalias() = below * dz.transpose();
    if (k > 0) {
      Vector<Scalar> da = w * dz;
      const auto& mask_src = trace.post[static_cast<std::size_t>(k - 1)];
      dz = (mask_src.array() > Scalar(0)).select(da, Vector<Scalar>::Zero(da.size()));
    }
  }
  return grads;
}

// Same backward pass but carried down to the input.
template <typename Scalar>
Vector<Scalar> grad_x_from_trace(const MlpParams<Scalar>& params, const ForwardTrace<Scalar>& trace,
                                 const Vector<Scalar>& cotangent) {
  const Index L = params.layer_count();
  Vector<Scalar> dz = cotangent;
  for (Index k = L - 1; k >= 1; --k) {
    Vector<Scalar> da = params.layers[static_cast<std::size_t>(k)] * dz;
    const auto& mask_src = trace.post[static_cast<std::size_t>(k - 1)];
    dz = (mask_src.array() > Scalar(0)).select(da, Vector<Scalar>::Zero(da.size()));
  }
  return params.layers.front() * dz;
}

// Gradient with respect to x of s(x) = <r, grad_theta(x; cotangent)> with
// the ReLU masks frozen at the trace. In the frozen regime the per-layer
// gradient of layer k is a_{k-1}(x) dz_k^T with dz_k constant in x, so
// s(x) = sum_k dz_k^T r_k^T a_{k-1}(x); each term is pushed back through
// the linearized layers below it in one accumulated descent.
template <typename Scalar>
Vector<Scalar> mixed_vjp_from_trace(const MlpParams<Scalar>& params, const ForwardTrace<Scalar>& trace,
                                    const Vector<Scalar>& cotangent,
                                    const std::vector<Matrix<Scalar>>& r) {
  const Index L = params.layer_count();
  if (static_cast<Index>(r.size()) != L) throw ShapeError("mixed_vjp: r has wrong layer count");
  // dz_k for every layer, top down.
  std::vector<Vector<Scalar>> dzs(static_cast<std::size_t>(L));
  Vector<Scalar> dz = cotangent;
  for (Index k = L - 1; k >= 0; --k) {
    dzs[static_cast<std::size_t>(k)] = dz;
    if (k > 0) {
      Vector<Scalar> da = params.layers[static_cast<std::size_t>(k)] * dz;
      const auto& mask_src = trace.post[static_cast<std::size_t>(k - 1)];
      dz = (mask_src.array() > Scalar(0)).select(da, Vector<Scalar>::Zero(da.size()));
    }
  }
  // u_k = r_k dz_k lives at the a_{k-1} level; accumulate while descending.
  Vector<Scalar> acc = r[static_cast<std::size_t>(L - 1)] * dzs[static_cast<std::size_t>(L - 1)];
  for (Index j = L - 1; j >= 1; --j) {
    const auto& mask_src = trace.post[static_cast<std::size_t>(j - 1)];
    Vector<Scalar> masked =
        (mask_src.array() > Scalar(0)).select(acc, Vector<Scalar>::Zero(acc.size()));
    acc.noalias() = params.layers[static_cast<std::size_t>(j - 1)] * masked;
    acc.noalias() += r[static_cast<std::size_t>(j - 1)] * dzs[static_cast<std::size_t>(j - 1)];
  }
  return acc;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> unflatten_like(const MlpParams<Scalar>& params,
                                           const Vector<Scalar>& flat) {
  if (flat.size() != params.param_count()) throw ShapeError("unflatten_like: length mismatch");
  std::vector<Matrix<Scalar>> out;
  out.reserve(params.layers.size());
  Index off = 0;
  for (const auto& w : params.layers) {
    Matrix<Scalar> m(w.rows(), w.cols());
    Eigen::Map<Vector<Scalar>>(m.data(), m.size()) = flat.segment(off, w.size());
    off += w.size();
    out.push_back(std::move(m));
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> flatten_stack(const std::vector<Matrix<Scalar>>& stack) {
  Index p = 0;
  for (const auto& m : stack) p += m.size();
  Vector<Scalar> flat(p);
  Index off = 0;
  for (const auto& m : stack) {
    flat.segment(off, m.size()) = Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
    off += m.size();
  }
  return flat;
}

}  // namespace detail

template <typename Scalar>
Vector<Scalar> forward(const MlpParams<Scalar>& params, const VecRef<Scalar>& x) {
  detail::check_input_shape(params, x.size());
  Vector<Scalar> act = x;
  const Index L = params.layer_count();
  for (Index k = 0; k < L; ++k) {
    Vector<Scalar> z = params.layers[static_cast<std::size_t>(k)].transpose() * act;
    if (k + 1 == L) return z;
    act = z.cwiseMax(Scalar(0));
  }
  return act;  // unreachable
}

// Batched forward: samples are rows of X, logits come back as rows.
template <typename Scalar>
Matrix<Scalar> forward_batch(const MlpParams<Scalar>& params,
                             const MatRef<Scalar>& X) {
  detail::check_input_shape(params, X.cols());
  Matrix<Scalar> act = X;
  const Index L = params.layer_count();
  for (Index k = 0; k < L; ++k) {
    Matrix<Scalar> z = act * params.layers[static_cast<std::size_t>(k)];
    if (k + 1 == L) return z;
    act = z.cwiseMax(Scalar(0));
  }
  return act;  // unreachable
}

// argmax over j != y; ties broken toward the lowest class index.
template <typename Scalar>
int runner_up(const Vector<Scalar>& logits, int y) {
  int best = -1;
  for (int j = 0; j < logits.size(); ++j) {
    if (j == y) continue;
    if (best < 0 || logits(j) > logits(best)) best = j;
  }
  return best;
}

template <typename Scalar>
void check_label(const MlpParams<Scalar>& params, int y) {
  if (y < 0 || y >= params.output_dim()) throw ShapeError("label out of range");
  if (params.output_dim() < 2) throw ShapeError("margin needs at least 2 outputs");
}

// Multi-class margin: Phi_y(x) - max_{j != y} Phi_j(x).
template <typename Scalar>
Scalar margin(const MlpParams<Scalar>& params, const VecRef<Scalar>& x, int y) {
  check_label(params, y);
  Vector<Scalar> logits = forward(params, x);
  return logits(y) - logits(runner_up(logits, y));
}

// Margins and runner-up classes for every row of X.
template <typename Scalar>
Vector<Scalar> margins_batch(const MlpParams<Scalar>& params, const MatRef<Scalar>& X,
                             const Eigen::VectorXi& labels,
                             Eigen::VectorXi* runner_ups = nullptr) {
  Matrix<Scalar> logits = forward_batch(params, X);
  Vector<Scalar> out(X.rows());
  if (runner_ups) runner_ups->resize(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    const int y = labels(i);
    if (y < 0 || y >= logits.cols()) throw ShapeError("label out of range");
    Vector<Scalar> row = logits.row(i);
    const int j = runner_up(row, y);
    out(i) = row(y) - row(j);
    if (runner_ups) (*runner_ups)(i) = j;
  }
  return out;
}

// Reverse-mode gradient of <cotangent, Phi(x)> with respect to flattened
// theta. The margin gradient is the cotangent e_y - e_{j*} with j* frozen
// at its forward-pass value.
template <typename Scalar>
Vector<Scalar> grad_theta_output(const MlpParams<Scalar>& params,
                                 const VecRef<Scalar>& x,
                                 const Vector<Scalar>& cotangent) {
  if (cotangent.size() != params.output_dim()) throw ShapeError("cotangent has wrong length");
  auto trace = detail::forward_trace(params, x);
  return detail::flatten_stack(detail::grad_theta_from_trace(params, trace, cotangent));
}

template <typename Scalar>
Vector<Scalar> margin_cotangent(const MlpParams<Scalar>& params, const Vector<Scalar>& logits, int y) {
  Vector<Scalar> c = Vector<Scalar>::Zero(params.output_dim());
  c(y) = Scalar(1);
  c(runner_up(logits, y)) = Scalar(-1);
  return c;
}

template <typename Scalar>
Vector<Scalar> grad_theta_margin(const MlpParams<Scalar>& params,
                                 const VecRef<Scalar>& x, int y) {
  check_label(params, y);
  auto trace = detail::forward_trace(params, x);
  Vector<Scalar> c = margin_cotangent(params, trace.logits, y);
  return detail::flatten_stack(detail::grad_theta_from_trace(params, trace, c));
}

template <typename Scalar>
Vector<Scalar> grad_x_margin(const MlpParams<Scalar>& params,
                             const VecRef<Scalar>& x, int y) {
  check_label(params, y);
  auto trace = detail::forward_trace(params, x);
  Vector<Scalar> c = margin_cotangent(params, trace.logits, y);
  return detail::grad_x_from_trace(params, trace, c);
}

// Gradient with respect to x of s(x) = r^T grad_theta_margin(params, x, y),
// ReLU activation patterns and the runner-up class frozen at the forward
// pass of x. This is the double-backprop quantity the reconstruction loss
// needs.
template <typename Scalar>
Vector<Scalar> mixed_vjp(const MlpParams<Scalar>& params, const VecRef<Scalar>& x,
                         int y, const Vector<Scalar>& r) {
  check_label(params, y);
  auto trace = detail::forward_trace(params, x);
  Vector<Scalar> c = margin_cotangent(params, trace.logits, y);
  return detail::mixed_vjp_from_trace(params, trace, c, detail::unflatten_like(params, r));
}

// Rescale theta by a positive factor per layer so the minimum margin over
// the set becomes exactly `target`. Margins are L-homogeneous in theta, so
// each layer is scaled by (target / min_margin)^(1/L). Requires a strictly
// positive minimum margin.
template <typename Scalar>
MlpParams<Scalar> rescale_to_margin(const MlpParams<Scalar>& params,
                                    const MatRef<Scalar>& X,
                                    const Eigen::VectorXi& labels, Scalar target = Scalar(1)) {
  Vector<Scalar> m = margins_batch(params, X, labels);
  const Scalar min_margin = m.minCoeff();
  if (!(min_margin > Scalar(0)))
    throw std::domain_error("rescale_to_margin: min margin is not positive");
  const double factor = std::pow(static_cast<double>(target) / static_cast<double>(min_margin),
                                 1.0 / static_cast<double>(params.layer_count()));
  MlpParams<Scalar> out = params;
  for (auto& w : out.layers) w *= static_cast<Scalar>(factor);
  return out;
}

}  // namespace recon
