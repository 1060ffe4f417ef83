#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "dualfocus/error.hpp"

namespace dualfocus {

/// Axis-aligned box in fractions of image width/height.
///
/// Canonical representation of a region everywhere in the library; pixel
/// coordinates are derived on demand with denormalize(). Construction
/// enforces 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
class NormBox {
 public:
  NormBox(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
    const bool ok = std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
                    std::isfinite(y2) && x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 &&
                    x1 < x2 && y1 < y2;
    if (!ok) {
      throw Error(ErrorCode::DegenerateBox, "normalized box out of range or empty: " + str());
    }
  }

  static NormBox full() { return {0.0, 0.0, 1.0, 1.0}; }

  double x1() const noexcept { return x1_; }
  double y1() const noexcept { return y1_; }
  double x2() const noexcept { return x2_; }
  double y2() const noexcept { return y2_; }
  double width() const noexcept { return x2_ - x1_; }
  double height() const noexcept { return y2_ - y1_; }
  double area() const noexcept { return width() * height(); }
  std::array<double, 4> coords() const noexcept { return {x1_, y1_, x2_, y2_}; }

  std::string str() const {
    return "(" + std::to_string(x1_) + ", " + std::to_string(y1_) + ", " + std::to_string(x2_) +
           ", " + std::to_string(y2_) + ")";
  }

  friend bool operator==(const NormBox&, const NormBox&) = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Integer pixel box inside an image of image_w x image_h pixels.
class PixelBox {
 public:
  PixelBox(int x1, int y1, int x2, int y2, int image_w, int image_h)
      : x1_(x1), y1_(y1), x2_(x2), y2_(y2), image_w_(image_w), image_h_(image_h) {
    const bool ok = image_w >= 1 && image_h >= 1 && x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2 &&
                    x2 <= image_w && y2 <= image_h;
    if (!ok) {
      throw Error(ErrorCode::DegenerateBox,
                  "pixel box (" + std::to_string(x1) + ", " + std::to_string(y1) + ", " +
                      std::to_string(x2) + ", " + std::to_string(y2) + ") invalid in " +
                      std::to_string(image_w) + "x" + std::to_string(image_h));
    }
  }

  int x1() const noexcept { return x1_; }
  int y1() const noexcept { return y1_; }
  int x2() const noexcept { return x2_; }
  int y2() const noexcept { return y2_; }
  int image_w() const noexcept { return image_w_; }
  int image_h() const noexcept { return image_h_; }
  int width() const noexcept { return x2_ - x1_; }
  int height() const noexcept { return y2_ - y1_; }
  long long area() const noexcept { return static_cast<long long>(width()) * height(); }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;

 private:
  int x1_, y1_, x2_, y2_;
  int image_w_, image_h_;
};

inline NormBox normalize(const PixelBox& pb) {
  const double w = pb.image_w();
  const double h = pb.image_h();
  return {pb.x1() / w, pb.y1() / h, pb.x2() / w, pb.y2() / h};
}

namespace detail {

// Rounds [lo, hi) onto the integer grid [0, extent] keeping at least one pixel.
inline std::pair<int, int> round_span(double lo, double hi, int extent) {
  int a = static_cast<int>(std::lround(lo * extent));
  int b = static_cast<int>(std::lround(hi * extent));
  a = std::clamp(a, 0, extent);
  b = std::clamp(b, 0, extent);
  if (b <= a) {
    b = a + 1;
    if (b > extent) {
      b = extent;
      a = extent - 1;
    }
  }
  return {a, b};
}

}  // namespace detail

/// Rounds to the nearest pixel, then widens collapsed spans to one pixel.
inline PixelBox denormalize(const NormBox& nb, int image_w, int image_h) {
  if (image_w < 1 || image_h < 1) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
  }
  const auto [x1, x2] = detail::round_span(nb.x1(), nb.x2(), image_w);
  const auto [y1, y2] = detail::round_span(nb.y1(), nb.y2(), image_h);
  return {x1, y1, x2, y2, image_w, image_h};
}

/// Clamps raw model coordinates into [0,1]. A box that is empty after
/// clamping is a DegenerateBox error; no region is invented.
inline NormBox clamp_to_unit(double x1, double y1, double x2, double y2) {
  for (double v : {x1, y1, x2, y2}) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::DegenerateBox, "non-finite coordinate");
    }
  }
  const auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  x1 = c(x1);
  y1 = c(y1);
  x2 = c(x2);
  y2 = c(y2);
  if (x1 >= x2 || y1 >= y2) {
    throw Error(ErrorCode::DegenerateBox, "box empty after clamping to unit square");
  }
  return {x1, y1, x2, y2};
}

inline NormBox clamp_to_unit(const std::array<double, 4>& raw) {
  return clamp_to_unit(raw[0], raw[1], raw[2], raw[3]);
}

inline double iou(const NormBox& a, const NormBox& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double iou(const PixelBox& a, const PixelBox& b) {
  const long long ix = std::max(0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const long long iy = std::max(0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace dualfocus
