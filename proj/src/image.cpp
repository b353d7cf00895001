#include "recon/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace recon {

Image sample_to_image(const Eigen::Ref<const Eigen::VectorXd>& sample) {
  if (sample.size() != 3072)
    throw ShapeError("to_image: sample has dim " + std::to_string(sample.size()) +
                     ", expected 3072");
  Image img = Image::zeros(32, 32);
  for (int c = 0; c < 3; ++c)
    for (Index r = 0; r < 32; ++r)
      for (Index col = 0; col < 32; ++col)
        img.ch[static_cast<std::size_t>(c)](r, col) = (sample(c * 1024 + r * 32 + col) + 1.0) / 2.0;
  return img;
}

Eigen::VectorXd image_to_sample(const Image& img) {
  if (img.height() != 32 || img.width() != 32)
    throw ShapeError("image_to_sample: expected a 32x32 image");
  Eigen::VectorXd sample(3072);
  for (int c = 0; c < 3; ++c)
    for (Index r = 0; r < 32; ++r)
      for (Index col = 0; col < 32; ++col)
        sample(c * 1024 + r * 32 + col) = img.ch[static_cast<std::size_t>(c)](r, col) * 2.0 - 1.0;
  return sample;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileFormatError("cannot open for writing: " + path.string());
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (Index r = 0; r < img.height(); ++r)
    for (Index c = 0; c < img.width(); ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = img.ch[static_cast<std::size_t>(ch)](r, c);
        const long b = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.put(static_cast<char>(static_cast<std::uint8_t>(b)));
      }
  if (!out) throw FileFormatError("write failed: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileFormatError("cannot open: " + path.string());
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw FileFormatError("unsupported PPM header: " + path.string());
  in.get();  // single whitespace after header
  Image img = Image::zeros(h, w);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const int b = in.get();
        if (b < 0) throw FileFormatError("truncated PPM: " + path.string());
        img.ch[static_cast<std::size_t>(ch)](r, c) = b / 255.0;
      }
  return img;
}

namespace {

// 3x5 glyphs, one bit per pixel, rows top to bottom.
struct Glyph {
  char ch;
  std::uint16_t rows[5];
};

constexpr Glyph kGlyphs[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b001, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'e', {0b000, 0b111, 0b110, 0b100, 0b111}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

void put_pixel(Image& img, Index r, Index c, double v) {
  if (r < 0 || c < 0 || r >= img.height() || c >= img.width()) return;
  for (auto& ch : img.ch) ch(r, c) = v;
}

}  // namespace

void draw_text(Image& img, Index row, Index col, const std::string& text, double value) {
  Index x = col;
  for (char c : text) {
    if (const Glyph* g = find_glyph(c)) {
      for (Index r = 0; r < 5; ++r)
        for (Index b = 0; b < 3; ++b)
          if (g->rows[r] & (0b100 >> b)) put_pixel(img, row + r, x + b, value);
    }
    x += 4;
  }
}

Image render_pair_grid(const std::vector<PairCell>& cells, Index per_row, Index scale) {
  if (cells.empty()) return Image::zeros(8, 8);
  per_row = std::max<Index>(1, per_row);
  Index tile_h = 0, tile_w = 0;
  for (const auto& cell : cells) {
    tile_h = std::max({tile_h, cell.top.height(), cell.bottom.height()});
    tile_w = std::max({tile_w, cell.top.width(), cell.bottom.width()});
  }
  const Index caption_h = 7;
  const Index pad = 2;
  const Index cell_w = tile_w + pad;
  const Index cell_h = caption_h + 2 * tile_h + 2 * pad;
  const Index rows = (static_cast<Index>(cells.size()) + per_row - 1) / per_row;
  const Index cols = std::min<Index>(per_row, static_cast<Index>(cells.size()));

  Image canvas = Image::zeros(rows * cell_h + pad, cols * cell_w + pad);
  for (auto& ch : canvas.ch) ch.setConstant(1.0);

  auto blit = [&](const Image& src, Index r0, Index c0) {
    for (int ch = 0; ch < 3; ++ch)
      canvas.ch[static_cast<std::size_t>(ch)].block(r0, c0, src.height(), src.width()) =
          src.ch[static_cast<std::size_t>(ch)];
  };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Index gr = static_cast<Index>(i) / per_row;
    const Index gc = static_cast<Index>(i) % per_row;
    const Index r0 = gr * cell_h + pad;
    const Index c0 = gc * cell_w + pad;
    draw_text(canvas, r0, c0, cells[i].caption);
    blit(cells[i].top, r0 + caption_h, c0);
    blit(cells[i].bottom, r0 + caption_h + tile_h + pad, c0);
  }

  if (scale <= 1) return canvas;
  Image big = Image::zeros(canvas.height() * scale, canvas.width() * scale);
  for (int ch = 0; ch < 3; ++ch)
    for (Index r = 0; r < big.height(); ++r)
      for (Index c = 0; c < big.width(); ++c)
        big.ch[static_cast<std::size_t>(ch)](r, c) =
            canvas.ch[static_cast<std::size_t>(ch)](r / scale, c / scale);
  return big;
}

}  // namespace recon
