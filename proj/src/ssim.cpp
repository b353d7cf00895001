#include "recon/ssim.hpp"

#include <cmath>

namespace recon {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Eigen::Matrix<double, kWindow, 1> gaussian_taps() {
  Eigen::Matrix<double, kWindow, 1> g;
  const double center = (kWindow - 1) / 2.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - center;
    g(i) = std::exp(-d * d / (2.0 * kSigma * kSigma));
  }
  return g / g.sum();
}

// Gaussian-weighted window sums over all valid window positions, computed
// separably (vertical pass then horizontal pass).
Eigen::MatrixXd windowed_sum(const Eigen::MatrixXd& m) {
  static const Eigen::Matrix<double, kWindow, 1> g = gaussian_taps();
  const Index out_h = m.rows() - (kWindow - 1);
  const Index out_w = m.cols() - (kWindow - 1);
  Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(out_h, m.cols());
  for (int k = 0; k < kWindow; ++k) tmp += g(k) * m.block(k, 0, out_h, m.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(out_h, out_w);
  for (int k = 0; k < kWindow; ++k) out += g(k) * tmp.block(0, k, out_h, out_w);
  return out;
}

}  // namespace

double ssim_channel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("ssim: image shapes differ");
  if (a.rows() < kWindow || a.cols() < kWindow)
    throw ShapeError("ssim: image smaller than the 11x11 window");

  const Eigen::MatrixXd mu1 = windowed_sum(a);
  const Eigen::MatrixXd mu2 = windowed_sum(b);
  const Eigen::MatrixXd s11 = windowed_sum(a.cwiseProduct(a));
  const Eigen::MatrixXd s22 = windowed_sum(b.cwiseProduct(b));
  const Eigen::MatrixXd s12 = windowed_sum(a.cwiseProduct(b));

  const auto var1 = (s11 - mu1.cwiseProduct(mu1)).array();
  const auto var2 = (s22 - mu2.cwiseProduct(mu2)).array();
  const auto cov = (s12 - mu1.cwiseProduct(mu2)).array();

  const Eigen::ArrayXXd num = (2.0 * mu1.array() * mu2.array() + kC1) * (2.0 * cov + kC2);
  const Eigen::ArrayXXd den =
      (mu1.array().square() + mu2.array().square() + kC1) * (var1 + var2 + kC2);
  return (num / den).mean();
}

double ssim(const Image& a, const Image& b) {
  double total = 0.0;
  for (int c = 0; c < 3; ++c)
    total += ssim_channel(a.ch[static_cast<std::size_t>(c)], b.ch[static_cast<std::size_t>(c)]);
  return total / 3.0;
}

}  // namespace recon
