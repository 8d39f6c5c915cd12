#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace drivefix {

// Planar-free HxWxC image, row-major, doubles. RGB frames live in [0,1];
// depth maps use meters with +inf as the sky sentinel.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {}

  double& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

  // Bilinear sample of channel ch at fractional (x, y); clamps to the border.
  double sample(double x, double y, int ch) const {
    double xf = std::clamp(x, 0.0, static_cast<double>(w - 1));
    double yf = std::clamp(y, 0.0, static_cast<double>(h - 1));
    int x0 = static_cast<int>(std::floor(xf));
    int y0 = static_cast<int>(std::floor(yf));
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double ax = xf - x0, ay = yf - y0;
    return (1 - ay) * ((1 - ax) * at(y0, x0, ch) + ax * at(y0, x1, ch)) +
           ay * ((1 - ax) * at(y1, x0, ch) + ax * at(y1, x1, ch));
  }
};

using SemMap = std::vector<uint8_t>;  // H*W class ids, see sem_class below

// Semantic class encoding: 0 = sky, 1 = ground, 2+k = object k.
inline constexpr uint8_t kSemSky = 0;
inline constexpr uint8_t kSemGround = 1;
inline constexpr uint8_t kSemObjectBase = 2;

inline constexpr double kSkyDepth = std::numeric_limits<double>::infinity();

inline Image clamp01(Image img) {
  for (double& x : img.v) x = std::clamp(x, 0.0, 1.0);
  return img;
}

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  double s = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return a.v.empty() ? 0.0 : s / static_cast<double>(a.v.size());
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace drivefix
