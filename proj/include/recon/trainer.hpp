#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "recon/csv.hpp"
#include "recon/dataset.hpp"
#include "recon/mlp.hpp"
#include "recon/types.hpp"

namespace recon {

// Nonnegative least squares by projected gradient descent with a
// backtracking step, so the objective is non-increasing by construction.
struct NnlsConfig {
  long max_iters = 50000;
  double tol = 1e-14;          // relative improvement stop
  double gram_budget_mb = 1024.0;  // memory cap for streamed gradient blocks
};

struct TrainConfig {
  double learning_rate = 0.5;
  long epochs = 1000;
  double weight_decay = 0.0;  // lambda_WD, coupled into the gradient
  InitScheme init;
  long checkpoint_every = 100;
  std::uint64_t seed = 0;
  double margin_epsilon = 0.1;  // "on the margin" band, relative to the min margin
  bool kkt_in_report = true;
  NnlsConfig nnls;

  void validate() const {
    // 0 is accepted as a degenerate diagnostic case (parameters unchanged)
    if (!(learning_rate >= 0)) throw ConfigError("train: learning_rate must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
  }
};

struct CheckpointStats {
  long epoch = 0;
  double ce_loss = std::numeric_limits<double>::quiet_NaN();
  double train_error = std::numeric_limits<double>::quiet_NaN();
  double test_error = std::numeric_limits<double>::quiet_NaN();  // NaN if no test set
  double mean_margin = std::numeric_limits<double>::quiet_NaN();
  double min_margin = std::numeric_limits<double>::quiet_NaN();
  double frac_on_margin = std::numeric_limits<double>::quiet_NaN();
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();  // NaN if not computed
};

struct TrainReport {
  std::vector<CheckpointStats> checkpoints;

  const CheckpointStats& final_checkpoint() const { return checkpoints.back(); }

  csv::Table to_csv() const {
    csv::Table t;
    t.header = {"epoch",      "ce_loss",    "train_error",    "test_error",
                "mean_margin", "min_margin", "frac_on_margin", "kkt_residual"};
    for (const auto& c : checkpoints)
      t.add_row({csv::format_int(c.epoch), csv::format_double(c.ce_loss),
                 csv::format_double(c.train_error), csv::format_double(c.test_error),
                 csv::format_double(c.mean_margin), csv::format_double(c.min_margin),
                 csv::format_double(c.frac_on_margin), csv::format_double(c.kkt_residual)});
    return t;
  }
};

namespace detail {

template <typename Scalar>
struct BatchTrace {
  std::vector<Matrix<Scalar>> post;  // post[k] = relu of layer k output, samples as rows
  Matrix<Scalar> logits;
};

template <typename Scalar>
BatchTrace<Scalar> forward_batch_trace(const MlpParams<Scalar>& params,
                                       const MatRef<Scalar>& X) {
  check_input_shape(params, X.cols());
  BatchTrace<Scalar> trace;
  const Index L = params.layer_count();
  Matrix<Scalar> act = X;
  for (Index k = 0; k < L; ++k) {
    Matrix<Scalar> z = act * params.layers[static_cast<std::size_t>(k)];
    if (k + 1 == L) {
      trace.logits = std::move(z);
    } else {
      act = z.cwiseMax(Scalar(0));
      trace.post.push_back(act);
    }
  }
  return trace;
}

// Backpropagates per-sample logit cotangents (rows of dlogits) into
// per-layer weight gradients. The sum over samples is a matrix product, so
// its reduction order is fixed by Eigen's kernel and reproducible.
template <typename Scalar>
std::vector<Matrix<Scalar>> backward_batch(const MlpParams<Scalar>& params,
                                           const MatRef<Scalar>& X,
                                           const BatchTrace<Scalar>& trace,
                                           Matrix<Scalar> dlogits) {
  const Index L = params.layer_count();
  std::vector<Matrix<Scalar>> grads(static_cast<std::size_t>(L));
  Matrix<Scalar> dz = std::move(dlogits);
  for (Index k = L - 1; k >= 0; --k) {
    const auto& below = (k == 0) ? X : MatRef<Scalar>(
                                           trace.post[static_cast<std::size_t>(k - 1)]);
    grads[static_cast<std::size_t>(k)].noalias() = below.transpose() * dz;
    if (k > 0) {
      Matrix<Scalar> da = dz * params.layers[static_cast<std::size_t>(k)].transpose();
      const auto& mask_src = trace.post[static_cast<std::size_t>(k - 1)];
      dz = (mask_src.array() > Scalar(0)).select(da, Matrix<Scalar>::Zero(da.rows(), da.cols()));
    }
  }
  return grads;
}

// Mean cross-entropy over the batch plus the softmax cotangent, with
// max-subtracted log-sum-exp.
template <typename Scalar>
Scalar softmax_cross_entropy(const Matrix<Scalar>& logits, const Eigen::VectorXi& labels,
                             Matrix<Scalar>* dlogits) {
  const Index n = logits.rows();
  Vector<Scalar> rowmax = logits.rowwise().maxCoeff();
  Matrix<Scalar> shifted = logits.colwise() - rowmax;
  Matrix<Scalar> expz = shifted.array().exp();
  Vector<Scalar> rowsum = expz.rowwise().sum();
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) loss += std::log(rowsum(i)) - shifted(i, labels(i));
  loss /= static_cast<Scalar>(n);
  if (dlogits) {
    *dlogits = expz.array().colwise() / rowsum.array();
    for (Index i = 0; i < n; ++i) (*dlogits)(i, labels(i)) -= Scalar(1);
    *dlogits /= static_cast<Scalar>(n);
  }
  return loss;
}

template <typename Scalar>
Scalar cross_entropy_stack(const MlpParams<Scalar>& params, const Matrix<Scalar>& X,
                           const Eigen::VectorXi& labels, std::vector<Matrix<Scalar>>* grad) {
  auto trace = forward_batch_trace(params, X);
  Matrix<Scalar> dlogits;
  const Scalar loss = softmax_cross_entropy(trace.logits, labels, grad ? &dlogits : nullptr);
  if (grad) *grad = backward_batch(params, MatRef<Scalar>(X), trace, std::move(dlogits));
  return loss;
}

template <typename Scalar>
double classification_error(const MlpParams<Scalar>& params, const Dataset<Scalar>& data) {
  Matrix<Scalar> logits = forward_batch(params, data.samples);
  Index wrong = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index argmax = 0;
    logits.row(i).maxCoeff(&argmax);  // first maximum wins on ties
    if (static_cast<int>(argmax) != data.labels(i)) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(logits.rows());
}

}  // namespace detail

// Mean cross-entropy of the dataset and its gradient with respect to
// flattened theta.
template <typename Scalar>
std::pair<Scalar, Vector<Scalar>> cross_entropy(const MlpParams<Scalar>& params,
                                                const Dataset<Scalar>& data) {
  if (data.n() < 1) throw ShapeError("cross_entropy: empty dataset");
  std::vector<Matrix<Scalar>> stack;
  const Scalar loss = detail::cross_entropy_stack(params, data.samples, data.labels, &stack);
  return {loss, detail::flatten_stack(stack)};
}

struct DualFit {
  Eigen::VectorXd lambda;
  double residual = 1.0;                // ||theta - G lambda|| / ||theta||
  std::vector<double> residual_trace;   // per accepted iteration
  long iterations = 0;
};

namespace detail {

inline double nnls_objective(const Eigen::MatrixXd& gtg, const Eigen::VectorXd& gt, double tsq,
                             const Eigen::VectorXd& lambda) {
  return lambda.dot(gtg * lambda) - 2.0 * gt.dot(lambda) + tsq;
}

// min_{lambda >= 0} ||theta - G lambda||^2 given the Gram matrix G^T G,
// G^T theta and ||theta||^2. Projected gradient descent from lambda = 0
// with backtracking halving; accepted steps never increase the objective.
inline DualFit nnls_nonneg(const Eigen::MatrixXd& gtg, const Eigen::VectorXd& gt, double tsq,
                           const NnlsConfig& cfg = {}) {
  const Index n = gt.size();
  DualFit fit;
  fit.lambda = Eigen::VectorXd::Zero(n);
  if (tsq <= 0.0) {
    fit.residual = 0.0;
    fit.residual_trace = {0.0};
    return fit;
  }
  const double tnorm = std::sqrt(tsq);
  auto rel = [&](double obj) { return std::sqrt(std::max(obj, 0.0)) / tnorm; };

  // Largest eigenvalue of the Gram matrix by power iteration sets the step.
  Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double eig = 0.0;
  for (int it = 0; it < 60; ++it) {
    Eigen::VectorXd w = gtg * v;
    eig = w.norm();
    if (eig <= 0.0) break;
    v = w / eig;
  }
  double obj = tsq;  // objective at lambda = 0
  fit.residual_trace.push_back(rel(obj));
  if (eig <= 0.0) {  // all margin gradients are zero
    fit.residual = rel(obj);
    return fit;
  }

  double step = 1.0 / eig;
  for (long it = 0; it < cfg.max_iters; ++it) {
    Eigen::VectorXd grad = 2.0 * (gtg * fit.lambda - gt);
    Eigen::VectorXd cand;
    double cand_obj = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      cand = (fit.lambda - step * grad).cwiseMax(0.0);
      cand_obj = nnls_objective(gtg, gt, tsq, cand);
      if (cand_obj <= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double improvement = obj - cand_obj;
    fit.lambda = std::move(cand);
    obj = cand_obj;
    fit.residual_trace.push_back(rel(obj));
    fit.iterations = it + 1;
    if (improvement <= cfg.tol * (1.0 + std::abs(obj))) break;
    step *= 1.2;
  }
  fit.residual = rel(obj);
  return fit;
}

// Streams per-sample margin-gradient columns in blocks sized to the memory
// budget and accumulates G^T G and G^T theta without materializing G.
template <typename Scalar>
void build_margin_gram(const MlpParams<Scalar>& params, const Dataset<Scalar>& data,
                       double budget_mb, Eigen::MatrixXd& gtg, Eigen::VectorXd& gt,
                       double& theta_sq) {
  const Index n = data.n();
  const Index p = params.param_count();
  Eigen::VectorXd theta = params.flatten().template cast<double>();
  theta_sq = theta.squaredNorm();

  const double col_mb = static_cast<double>(p) * 8.0 / (1024.0 * 1024.0);
  const Index block = std::max<Index>(1, std::min<Index>(n, static_cast<Index>(budget_mb / (2.0 * col_mb))));

  auto compute_block = [&](Index begin, Index end, Eigen::MatrixXd& cols) {
    cols.resize(p, end - begin);
    for (Index i = begin; i < end; ++i) {
      Vector<Scalar> x = data.samples.row(i);
      cols.col(i - begin) =
          grad_theta_margin(params, x, data.labels(i)).template cast<double>();
    }
  };

  gtg.setZero(n, n);
  gt.setZero(n);
  Eigen::MatrixXd cols_a, cols_b;
  for (Index a = 0; a < n; a += block) {
    const Index a_end = std::min(n, a + block);
    compute_block(a, a_end, cols_a);
    gt.segment(a, a_end - a) = cols_a.transpose() * theta;
    gtg.block(a, a, a_end - a, a_end - a) = cols_a.transpose() * cols_a;
    for (Index b = a_end; b < n; b += block) {
      const Index b_end = std::min(n, b + block);
      compute_block(b, b_end, cols_b);
      gtg.block(a, b, a_end - a, b_end - b) = cols_a.transpose() * cols_b;
      gtg.block(b, a, b_end - b, a_end - a) = gtg.block(a, b, a_end - a, b_end - b).transpose();
    }
  }
}

}  // namespace detail

// Best nonnegative combination of per-sample margin gradients explaining
// theta: solves min_{lambda >= 0} ||theta - sum_i lambda_i g_i||^2 with
// g_i = grad_theta_margin(params, x_i, y_i). The returned residual is
// relative (||theta - G lambda|| / ||theta||); lambda = 0 gives exactly 1.
template <typename Scalar>
DualFit fit_dual_coefficients(const MlpParams<Scalar>& params, const Dataset<Scalar>& data,
                              const NnlsConfig& cfg = {}) {
  Eigen::MatrixXd gtg;
  Eigen::VectorXd gt;
  double tsq = 0.0;
  detail::build_margin_gram(params, data, cfg.gram_budget_mb, gtg, gt, tsq);
  return detail::nnls_nonneg(gtg, gt, tsq, cfg);
}

struct KktAudit {
  double residual = 1.0;
  Eigen::VectorXd lambda;
  Eigen::VectorXd margins;
  double min_margin = 0.0;
  double max_margin = 0.0;
  Index violations = 0;  // raw margins below 1 (primal feasibility at KKT scale)
  // Fraction of active duals (lambda_i > lambda_tol * max lambda) whose
  // normalized margin (min margin rescaled to 1) exceeds 1 + epsilon; NaN
  // when the min margin is not positive or nothing is active.
  double slack_mismatch_fraction = std::numeric_limits<double>::quiet_NaN();
  double epsilon = 0.1;
};

template <typename Scalar>
KktAudit kkt_audit(const MlpParams<Scalar>& params, const Dataset<Scalar>& data,
                   const NnlsConfig& nnls = {}, double epsilon = 0.1,
                   double lambda_tol = 1e-3) {
  KktAudit audit;
  audit.epsilon = epsilon;
  DualFit fit = fit_dual_coefficients(params, data, nnls);
  audit.residual = fit.residual;
  audit.lambda = std::move(fit.lambda);
  Vector<Scalar> m = margins_batch(params, data.samples, data.labels);
  audit.margins = m.template cast<double>();
  audit.min_margin = audit.margins.minCoeff();
  audit.max_margin = audit.margins.maxCoeff();
  audit.violations = (audit.margins.array() < 1.0).count();
  const double lam_max = audit.lambda.size() ? audit.lambda.maxCoeff() : 0.0;
  if (audit.min_margin > 0.0 && lam_max > 0.0) {
    Index active = 0, mismatched = 0;
    for (Index i = 0; i < audit.lambda.size(); ++i) {
      if (audit.lambda(i) <= lambda_tol * lam_max) continue;
      ++active;
      if (audit.margins(i) / audit.min_margin > 1.0 + epsilon) ++mismatched;
    }
    if (active > 0)
      audit.slack_mismatch_fraction = static_cast<double>(mismatched) / static_cast<double>(active);
  }
  return audit;
}

namespace detail {

template <typename Scalar>
CheckpointStats checkpoint_stats(const MlpParams<Scalar>& params, const Dataset<Scalar>& data,
                                 const Dataset<Scalar>* test, const TrainConfig& cfg, long epoch) {
  CheckpointStats s;
  s.epoch = epoch;
  s.ce_loss = static_cast<double>(cross_entropy_stack<Scalar>(params, data.samples, data.labels, nullptr));
  s.train_error = classification_error(params, data);
  if (test) s.test_error = classification_error(params, *test);
  Vector<Scalar> m = margins_batch(params, data.samples, data.labels);
  s.mean_margin = static_cast<double>(m.mean());
  s.min_margin = static_cast<double>(m.minCoeff());
  // Margins are unnormalized while training, so the "on the margin" band is
  // relative to the min margin once it is positive; before that the raw
  // m < 1 + eps count is reported.
  if (s.min_margin > 0) {
    s.frac_on_margin = static_cast<double>(
        (m.array() <= static_cast<Scalar>((1.0 + cfg.margin_epsilon) * s.min_margin)).count()) /
        static_cast<double>(m.size());
  } else {
    s.frac_on_margin =
        static_cast<double>((m.array() < static_cast<Scalar>(1.0 + cfg.margin_epsilon)).count()) /
        static_cast<double>(m.size());
  }
  if (cfg.kkt_in_report)
    s.kkt_residual = fit_dual_coefficients(params, data, cfg.nnls).residual;
  return s;
}

}  // namespace detail

// Full-batch gradient descent on mean cross-entropy with coupled weight
// decay. The update is applied per layer as
//   W <- (1 - lr * wd) * W - lr * dW
// which is exactly the shrink-then-step algebra. Deterministic given the
// inputs; throws DivergenceError when the loss stops being finite.
template <typename Scalar>
std::pair<MlpParams<Scalar>, TrainReport> train(MlpParams<Scalar> params,
                                                const Dataset<Scalar>& data,
                                                const TrainConfig& cfg,
                                                const Dataset<Scalar>* test = nullptr) {
  cfg.validate();
  data.validate();
  if (data.class_count != params.output_dim())
    throw ShapeError("train: dataset class count != network outputs");
  TrainReport report;
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar shrink = Scalar(1) - lr * static_cast<Scalar>(cfg.weight_decay);
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Matrix<Scalar>> grad;
    const Scalar loss = detail::cross_entropy_stack(params, data.samples, data.labels, &grad);
    if (!std::isfinite(static_cast<double>(loss)))
      throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    for (std::size_t k = 0; k < params.layers.size(); ++k)
      params.layers[k] = shrink * params.layers[k] - lr * grad[k];
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)
      report.checkpoints.push_back(detail::checkpoint_stats(params, data, test, cfg, epoch));
  }
  return {std::move(params), std::move(report)};
}

}  // namespace recon
