#pragma once

#include <Eigen/Dense>
#include <string>

namespace graphdiff {

// RGB image with values in [0,1], stored channels-by-pixels (3 x h*w,
// column index y*w + x) so it drops straight into the conv layout.
struct Image {
  int h = 0;
  int w = 0;
  Eigen::MatrixXd chw;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), chw(Eigen::MatrixXd::Zero(3, h_ * w_)) {}

  double& at(int c, int y, int x) { return chw(c, y * w + x); }
  double at(int c, int y, int x) const { return chw(c, y * w + x); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w; }
};

Image clamp01(Image img);

// Binary PPM (P6, 8-bit). Quantization is round-to-nearest on write.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

// Integer translation with zero fill.
Image shift_image(const Image& src, int dy, int dx);

}  // namespace graphdiff
