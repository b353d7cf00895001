#pragma once

#include <functional>
#include <random>

#include "recon/mlp.hpp"
#include "recon/types.hpp"

namespace recon::testutil {

inline Eigen::VectorXd random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = unit(rng);
  return v;
}

// Central finite differences of a scalar function of a vector.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi(i) += h;
    lo(i) -= h;
    g(i) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Eigen::VectorXd& approx, const Eigen::VectorXd& exact) {
  return (approx - exact).norm() / std::max(exact.norm(), 1e-12);
}

// A point (theta, x, y) is "generic" when the runner-up class is strictly
// isolated and every ReLU preactivation is well away from zero, so the
// frozen derivative branches cannot flip under a finite-difference probe.
inline bool generic_point(const MlpParams<double>& params, const Eigen::VectorXd& x, int y,
                          double gap = 1e-3) {
  Eigen::VectorXd act = x;
  const Index L = params.layer_count();
  for (Index k = 0; k + 1 < L; ++k) {
    Eigen::VectorXd z = params.layers[static_cast<std::size_t>(k)].transpose() * act;
    if (z.cwiseAbs().minCoeff() < gap) return false;
    act = z.cwiseMax(0.0);
  }
  Eigen::VectorXd logits = params.layers[static_cast<std::size_t>(L - 1)].transpose() * act;
  const int j = runner_up(logits, y);
  for (int c = 0; c < logits.size(); ++c)
    if (c != y && c != j && logits(j) - logits(c) < gap) return false;
  return true;
}

// Deterministically searches seed, seed+1, ... for a generic random point.
struct GenericPoint {
  MlpParams<double> params;
  Eigen::VectorXd x;
  int y;
};

inline GenericPoint sample_generic_point(const std::vector<Index>& dims, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    InitScheme scheme;
    scheme.seed = seed + attempt;
    MlpParams<double> params = init_params<double>(scheme, dims);
    for (auto& w : params.layers) w *= 2.0;  // keep preactivations scale O(1)
    std::mt19937_64 rng(seed + 7919 * (attempt + 1));
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd x(dims.front());
    for (Index i = 0; i < x.size(); ++i) x(i) = unit(rng);
    const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(dims.back()));
    if (generic_point(params, x, y)) return {std::move(params), std::move(x), y};
  }
}

}  // namespace recon::testutil
