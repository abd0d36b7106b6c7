#include "graphdiff/image.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

namespace graphdiff {

Image clamp01(Image img) {
  img.chw = img.chw.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write image: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, img.at(c, y, x)));
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("short write on image: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read image: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("unsupported image format in " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("malformed PPM header in " + path);
  f.get();  // single whitespace after header
  Image img(h, w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw std::runtime_error("truncated PPM data in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

Image shift_image(const Image& src, int dy, int dx) {
  Image out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= src.h) continue;
    for (int x = 0; x < src.w; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= src.w) continue;
      for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = src.at(ch, sy, sx);
    }
  }
  return out;
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: image shape mismatch");
  return (a.chw - b.chw).squaredNorm() / static_cast<double>(a.chw.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

}  // namespace graphdiff
