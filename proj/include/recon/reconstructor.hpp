#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "recon/binio.hpp"
#include "recon/config_file.hpp"
#include "recon/mlp.hpp"
#include "recon/types.hpp"

namespace recon {

struct ReconOptimizer {
  double step_x = 0.01;
  double step_a = 0.01;
  double momentum = 0.9;
  long iterations = 5000;
};

// Hyperparameters of one reconstruction run. Candidate labels are fixed:
// round-robin over classes when explicit_labels is empty (candidate i gets
// class i mod C), otherwise the given list.
struct ReconConfig {
  Index m = 0;
  double lambda_min = 0.0;  // lambda_i = a_i^2 + lambda_min
  double sigma_x = 0.1;     // candidate init scale
  ReconOptimizer opt;
  std::uint64_t seed = 0;
  std::vector<int> explicit_labels;

  void validate() const {
    if (m < 1) throw ConfigError("recon: m must be >= 1");
    if (lambda_min < 0) throw ConfigError("recon: lambda_min must be >= 0");
    if (!(sigma_x > 0)) throw ConfigError("recon: sigma_x must be > 0");
    if (opt.iterations < 0) throw ConfigError("recon: iterations must be >= 0");
    if (!explicit_labels.empty() && static_cast<Index>(explicit_labels.size()) != m)
      throw ConfigError("recon: explicit label list length != m");
  }

  KeyValues echo() const {
    KeyValues kv;
    kv.set_int("m", m);
    kv.set_double("lambda_min", lambda_min);
    kv.set_double("sigma_x", sigma_x);
    kv.set_double("step_x", opt.step_x);
    kv.set_double("step_a", opt.step_a);
    kv.set_double("momentum", opt.momentum);
    kv.set_int("iterations", opt.iterations);
    kv.set_uint64("seed", seed);
    return kv;
  }
};

// Candidate inputs, their fixed labels, the dual parameters a (so that
// lambda_i = a_i^2 + lambda_min >= lambda_min always), and the loss trace.
template <typename Scalar>
struct ReconState {
  Matrix<Scalar> candidates;  // m x d
  Eigen::VectorXi labels;
  Vector<Scalar> duals;  // a
  double lambda_min = 0.0;
  std::vector<double> loss_trace;

  Index m() const { return candidates.rows(); }
  Index dim() const { return candidates.cols(); }

  Vector<Scalar> lambdas() const {
    return (duals.array().square() + static_cast<Scalar>(lambda_min)).matrix();
  }
};

inline Eigen::VectorXi balanced_labels(Index m, Index class_count) {
  Eigen::VectorXi labels(m);
  for (Index i = 0; i < m; ++i) labels(i) = static_cast<int>(i % class_count);
  return labels;
}

namespace detail {

// Shared forward/backward scaffolding of the stationarity loss
//   L_st = || theta - sum_i lambda_i grad_theta margin(x_i, y_i) ||^2
// evaluated for all candidates at once. Per-candidate margin cotangents are
// rows of dZ at the top layer; everything below is matrix products, so the
// candidate sum runs in a fixed reduction order.
template <typename Scalar>
struct ReconWork {
  std::vector<Matrix<Scalar>> post;  // activations per hidden layer, m x h
  std::vector<Matrix<Scalar>> dz;    // backpropagated cotangents per layer
  std::vector<Matrix<Scalar>> residual;  // r_k = theta_k - sum_i lambda_i g_{i,k}
  double loss = 0.0;
};

template <typename Scalar>
ReconWork<Scalar> recon_residual(const MlpParams<Scalar>& params, const Matrix<Scalar>& X,
                                 const Eigen::VectorXi& labels, const Vector<Scalar>& lambdas) {
  const Index L = params.layer_count();
  const Index m = X.rows();
  if (labels.size() != m || lambdas.size() != m)
    throw ShapeError("recon: candidate/label/dual count mismatch");
  check_input_shape(params, X.cols());

  ReconWork<Scalar> work;
  work.post.reserve(static_cast<std::size_t>(L - 1));
  Matrix<Scalar> act = X;
  Matrix<Scalar> logits;
  for (Index k = 0; k < L; ++k) {
    Matrix<Scalar> z = act * params.layers[static_cast<std::size_t>(k)];
    if (k + 1 == L) {
      logits = std::move(z);
    } else {
      act = z.cwiseMax(Scalar(0));
      work.post.push_back(act);
    }
  }

  const Index C = params.output_dim();
  Matrix<Scalar> dz_top = Matrix<Scalar>::Zero(m, C);
  for (Index i = 0; i < m; ++i) {
    const int y = labels(i);
    if (y < 0 || y >= C) throw ShapeError("recon: candidate label out of range");
    Vector<Scalar> row = logits.row(i).transpose();
    dz_top(i, y) = Scalar(1);
    dz_top(i, runner_up(row, y)) = Scalar(-1);
  }

  work.dz.assign(static_cast<std::size_t>(L), {});
  work.dz[static_cast<std::size_t>(L - 1)] = std::move(dz_top);
  for (Index k = L - 1; k >= 1; --k) {
    Matrix<Scalar> da =
        work.dz[static_cast<std::size_t>(k)] * params.layers[static_cast<std::size_t>(k)].transpose();
    const auto& mask_src = work.post[static_cast<std::size_t>(k - 1)];
    work.dz[static_cast<std::size_t>(k - 1)] =
        (mask_src.array() > Scalar(0)).select(da, Matrix<Scalar>::Zero(da.rows(), da.cols()));
  }

  work.residual.resize(static_cast<std::size_t>(L));
  double loss = 0.0;
  for (Index k = 0; k < L; ++k) {
    const Matrix<Scalar>& below = (k == 0) ? X : work.post[static_cast<std::size_t>(k - 1)];
    Matrix<Scalar> scaled =
        (work.dz[static_cast<std::size_t>(k)].array().colwise() * lambdas.array()).matrix();
    Matrix<Scalar>& r = work.residual[static_cast<std::size_t>(k)];
    r = params.layers[static_cast<std::size_t>(k)];
    r.noalias() -= below.transpose() * scaled;
    loss += static_cast<double>(r.squaredNorm());
  }
  work.loss = loss;
  return work;
}

}  // namespace detail

// Stationarity loss of a candidate state.
template <typename Scalar>
double recon_loss(const MlpParams<Scalar>& params, const ReconState<Scalar>& state) {
  return detail::recon_residual(params, state.candidates, state.labels, state.lambdas()).loss;
}

template <typename Scalar>
struct ReconGrads {
  double loss = 0.0;
  Matrix<Scalar> dX;      // m x d
  Vector<Scalar> dduals;  // length m
};

// Loss and exact gradients with respect to candidates and duals, with
// activation patterns and runner-up classes frozen at the forward pass:
//   dL/da_i = -4 a_i (g_i . r)
//   dL/dx_i = -2 lambda_i * d/dx_i (g_i . r)
template <typename Scalar>
ReconGrads<Scalar> recon_grads(const MlpParams<Scalar>& params, const ReconState<Scalar>& state) {
  const Index L = params.layer_count();
  const Index m = state.m();
  const Vector<Scalar> lambdas = state.lambdas();
  auto work = detail::recon_residual(params, state.candidates, state.labels, lambdas);

  // g_i . r accumulated per layer: <dz_k(i), (A_{k-1} r_k)(i)>.
  Vector<Scalar> g_dot_r = Vector<Scalar>::Zero(m);
  for (Index k = 0; k < L; ++k) {
    const Matrix<Scalar>& below =
        (k == 0) ? state.candidates : work.post[static_cast<std::size_t>(k - 1)];
    Matrix<Scalar> proj = below * work.residual[static_cast<std::size_t>(k)];
    g_dot_r += proj.cwiseProduct(work.dz[static_cast<std::size_t>(k)]).rowwise().sum();
  }

  ReconGrads<Scalar> grads;
  grads.loss = work.loss;
  grads.dduals = Scalar(-4) * state.duals.cwiseProduct(g_dot_r);

  // Mixed term: descend U_k = dz_k r_k^T through the frozen linearized
  // layers, accumulating level by level down to the input.
  Matrix<Scalar> acc =
      work.dz[static_cast<std::size_t>(L - 1)] * work.residual[static_cast<std::size_t>(L - 1)].transpose();
  for (Index j = L - 1; j >= 1; --j) {
    const auto& mask_src = work.post[static_cast<std::size_t>(j - 1)];
    Matrix<Scalar> masked =
        (mask_src.array() > Scalar(0)).select(acc, Matrix<Scalar>::Zero(acc.rows(), acc.cols()));
    acc.noalias() = masked * params.layers[static_cast<std::size_t>(j - 1)].transpose();
    acc.noalias() += work.dz[static_cast<std::size_t>(j - 1)] *
                     work.residual[static_cast<std::size_t>(j - 1)].transpose();
  }
  grads.dX = Scalar(-2) * (acc.array().colwise() * lambdas.array()).matrix();
  return grads;
}

// Gradient descent with heavy-ball momentum on (X, a), candidates clipped
// to [-1, 1] after every step. X entries are drawn N(0, sigma_x^2) in
// candidate-major order, then a ~ N(0, 1); deterministic per seed. The
// loss trace holds the loss at each visited iterate including the final
// one (iterations + 1 entries).
template <typename Scalar>
ReconState<Scalar> reconstruct(const MlpParams<Scalar>& params, const ReconConfig& cfg) {
  cfg.validate();
  const Index d = params.input_dim();
  const Index C = params.output_dim();

  ReconState<Scalar> state;
  state.lambda_min = cfg.lambda_min;
  state.candidates.resize(cfg.m, d);
  state.duals.resize(cfg.m);
  if (cfg.explicit_labels.empty()) {
    state.labels = balanced_labels(cfg.m, C);
  } else {
    state.labels.resize(cfg.m);
    for (Index i = 0; i < cfg.m; ++i) {
      if (cfg.explicit_labels[static_cast<std::size_t>(i)] < 0 ||
          cfg.explicit_labels[static_cast<std::size_t>(i)] >= C)
        throw ConfigError("recon: explicit label out of range");
      state.labels(i) = cfg.explicit_labels[static_cast<std::size_t>(i)];
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < cfg.m; ++i)
    for (Index j = 0; j < d; ++j)
      state.candidates(i, j) = static_cast<Scalar>(cfg.sigma_x * unit(rng));
  for (Index i = 0; i < cfg.m; ++i) state.duals(i) = static_cast<Scalar>(unit(rng));
  state.candidates = state.candidates.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));

  Matrix<Scalar> vel_x = Matrix<Scalar>::Zero(cfg.m, d);
  Vector<Scalar> vel_a = Vector<Scalar>::Zero(cfg.m);
  const Scalar step_x = static_cast<Scalar>(cfg.opt.step_x);
  const Scalar step_a = static_cast<Scalar>(cfg.opt.step_a);
  const Scalar mu = static_cast<Scalar>(cfg.opt.momentum);

  state.loss_trace.reserve(static_cast<std::size_t>(cfg.opt.iterations) + 1);
  for (long it = 0; it < cfg.opt.iterations; ++it) {
    ReconGrads<Scalar> g = recon_grads(params, state);
    if (!std::isfinite(g.loss))
      throw DivergenceError("reconstruction loss non-finite at iteration " + std::to_string(it));
    state.loss_trace.push_back(g.loss);
    vel_x = mu * vel_x - step_x * g.dX;
    state.candidates += vel_x;
    state.candidates = state.candidates.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
    vel_a = mu * vel_a - step_a * g.dduals;
    state.duals += vel_a;
  }
  const double final_loss = recon_loss(params, state);
  if (!std::isfinite(final_loss))
    throw DivergenceError("reconstruction loss non-finite at iteration " +
                          std::to_string(cfg.opt.iterations));
  state.loss_trace.push_back(final_loss);
  return state;
}

template <typename Scalar>
struct SearchResult {
  ReconConfig config;
  std::optional<ReconState<Scalar>> state;
  double score = std::numeric_limits<double>::infinity();
  std::string error;
  std::size_t grid_index = 0;
};

template <typename Scalar>
double final_loss_score(const ReconState<Scalar>& state) {
  return state.loss_trace.empty() ? std::numeric_limits<double>::infinity()
                                  : state.loss_trace.back();
}

// Runs reconstruct for every config and ranks by score (lower is better;
// the default scorer is the final loss). Runs are independent and execute
// on up to `workers` threads; results are deterministic regardless of
// scheduling. A failed run keeps its config, carries the error message and
// sorts last.
template <typename Scalar>
std::vector<SearchResult<Scalar>> hyperparam_search(
    const MlpParams<Scalar>& params, const std::vector<ReconConfig>& grid,
    const std::function<double(const ReconState<Scalar>&)>& scorer = {}, int workers = 1) {
  if (grid.empty()) throw ConfigError("hyperparam_search: empty grid");
  const auto score_fn = scorer ? scorer : final_loss_score<Scalar>;
  std::vector<SearchResult<Scalar>> results(grid.size());

  std::atomic<std::size_t> next{0};
  auto run_one = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= grid.size()) return;
      SearchResult<Scalar>& r = results[i];
      r.config = grid[i];
      r.grid_index = i;
      try {
        r.state = reconstruct(params, grid[i]);
        r.score = score_fn(*r.state);
      } catch (const std::exception& e) {
        r.error = e.what();
        r.score = std::numeric_limits<double>::infinity();
      }
    }
  };

  const int thread_count = std::max(1, std::min<int>(workers, static_cast<int>(grid.size())));
  if (thread_count == 1) {
    run_one();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(run_one);
    for (auto& t : pool) t.join();
  }

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.grid_index < b.grid_index;
  });
  return results;
}

// --- persistence --------------------------------------------------------
//
// Recon-state container (see docs/formats.md):
//   magic "RKRECON\0" | u32 version = 1 | u8 precision | u8 0 | u16 0
//   | u32 m | u32 d | u32 trace_len | u32 config_len | config echo bytes
//   | labels (i32 each) | candidates (row-major scalars) | duals
//   | f64 lambda_min | loss trace (f64 each) | u64 checksum.
inline constexpr char kReconMagic[8] = {'R', 'K', 'R', 'E', 'C', 'O', 'N', '\0'};
inline constexpr std::uint32_t kReconVersion = 1;

template <typename Scalar>
void save_recon_state(const std::filesystem::path& path, const ReconState<Scalar>& state,
                      const KeyValues& config_echo = {}) {
  detail::ByteWriter w;
  w.u32(kReconVersion);
  w.u8(static_cast<std::uint8_t>(precision_of<Scalar>()));
  w.u8(0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(state.m()));
  w.u32(static_cast<std::uint32_t>(state.dim()));
  w.u32(static_cast<std::uint32_t>(state.loss_trace.size()));
  const std::string echo = config_echo.serialize();
  w.u32(static_cast<std::uint32_t>(echo.size()));
  w.raw(echo.data(), echo.size());
  for (Index i = 0; i < state.m(); ++i) w.i32(state.labels(i));
  for (Index i = 0; i < state.m(); ++i)
    for (Index j = 0; j < state.dim(); ++j) w.pod(state.candidates(i, j));
  for (Index i = 0; i < state.m(); ++i) w.pod(state.duals(i));
  w.f64(state.lambda_min);
  for (double v : state.loss_trace) w.f64(v);
  detail::write_container(path, kReconMagic, w.bytes);
}

template <typename Scalar>
ReconState<Scalar> load_recon_state(const std::filesystem::path& path,
                                    KeyValues* config_echo = nullptr) {
  const auto payload = detail::read_container(path, kReconMagic);
  detail::ByteReader r{payload.data(), payload.size()};
  if (r.u32() != kReconVersion) throw FileFormatError("unsupported recon-state version");
  const std::uint8_t prec = r.u8();
  r.u8();
  r.u16();
  if (prec != static_cast<std::uint8_t>(precision_of<Scalar>()))
    throw FileFormatError("recon state precision is " +
                          std::string(precision_name(static_cast<Precision>(prec))) +
                          "; load with the matching scalar type");
  const std::uint32_t m = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t trace_len = r.u32();
  const std::uint32_t config_len = r.u32();
  std::string echo(config_len, '\0');
  r.raw(echo.data(), config_len);
  if (config_echo) *config_echo = KeyValues::parse_string(echo);
  ReconState<Scalar> state;
  state.labels.resize(m);
  for (std::uint32_t i = 0; i < m; ++i) state.labels(i) = r.i32();
  state.candidates.resize(m, d);
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < d; ++j) state.candidates(i, j) = r.pod<Scalar>();
  state.duals.resize(m);
  for (std::uint32_t i = 0; i < m; ++i) state.duals(i) = r.pod<Scalar>();
  state.lambda_min = r.f64();
  state.loss_trace.resize(trace_len);
  for (std::uint32_t i = 0; i < trace_len; ++i) state.loss_trace[i] = r.f64();
  r.expect_end();
  return state;
}

}  // namespace recon
