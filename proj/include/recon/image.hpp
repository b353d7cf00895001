#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "recon/types.hpp"

namespace recon {

// RGB image with values in [0, 1], one matrix per channel.
struct Image {
  std::array<Eigen::MatrixXd, 3> ch;

  Index height() const { return ch[0].rows(); }
  Index width() const { return ch[0].cols(); }

  static Image zeros(Index h, Index w) {
    Image img;
    for (auto& c : img.ch) c = Eigen::MatrixXd::Zero(h, w);
    return img;
  }
};

// Length-3072 normalized sample ([-1,1], CIFAR plane layout) -> 32x32x3
// image in [0,1] via v -> (v+1)/2.
Image sample_to_image(const Eigen::Ref<const Eigen::VectorXd>& sample);

// Inverse of sample_to_image.
Eigen::VectorXd image_to_sample(const Image& img);

template <typename Scalar>
Image to_image(const VecRef<Scalar>& sample) {
  return sample_to_image(sample.template cast<double>());
}

// Binary PPM (P6), 8 bits per channel, values rounded from [0,1].
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

// Draws text into all three channels with a 3x5 bitmap font (digits, '.',
// '-', 'e'); anything else renders as a blank advance.
void draw_text(Image& img, Index row, Index col, const std::string& text, double value = 0.0);

// One cell of a comparison grid: a caption line over two stacked tiles
// (training image on top, reconstruction below).
struct PairCell {
  Image top;
  Image bottom;
  std::string caption;
};

// Lays cells out left to right, `per_row` to a line, on a white background.
// `scale` is integer pixel replication for eyeballability.
Image render_pair_grid(const std::vector<PairCell>& cells, Index per_row, Index scale = 2);

}  // namespace recon
