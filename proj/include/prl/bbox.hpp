#pragma once

#include <string>

namespace prl {

/// Axis-aligned box: top-left corner (x, y) and extents (w, h) in pixels.
struct BBox {
  double x = 0, y = 0, w = 1, h = 1;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, w, h};
  }
  bool operator==(const BBox&) const = default;
};

std::string to_string(const BBox& b);

}  // namespace prl
