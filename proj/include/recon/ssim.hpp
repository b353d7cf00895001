#pragma once

#include "recon/image.hpp"

namespace recon {

// Structural similarity of two equal-shaped images in [0,1]: 11x11 Gaussian
// window (sigma 1.5), C1 = (0.01)^2, C2 = (0.03)^2 at dynamic range 1, local
// map averaged over valid window positions, channels scored independently
// and averaged. ssim(x, x) == 1.0 exactly.
double ssim(const Image& a, const Image& b);

// Per-channel single-channel variant used internally and by tests.
double ssim_channel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace recon
