#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "takit/error.hpp"

namespace takit {

/// Axis-aligned rectangle in absolute pixel coordinates, x_min < x_max and
/// y_min < y_max. Degenerate rectangles are rejected at construction.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  Box() = default;

  Box(double x0, double y0, double x1, double y1)
      : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {
    if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
        !std::isfinite(y_max)) {
      throw DegenerateBoxError("box coordinates must be finite");
    }
    if (!(x_min < x_max) || !(y_min < y_max)) {
      throw DegenerateBoxError("box must have strictly positive area: [" +
                               std::to_string(x_min) + "," + std::to_string(y_min) + "," +
                               std::to_string(x_max) + "," + std::to_string(y_max) + "]");
    }
  }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  bool operator==(const Box& o) const {
    return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
  }

  /// Lexicographic order on (x_min, y_min, x_max, y_max); used wherever a
  /// canonical box ordering is required for determinism.
  bool operator<(const Box& o) const {
    if (x_min != o.x_min) return x_min < o.x_min;
    if (y_min != o.y_min) return y_min < o.y_min;
    if (x_max != o.x_max) return x_max < o.x_max;
    return y_max < o.y_max;
  }
};

struct ImageSize {
  int width = 1;
  int height = 1;

  ImageSize() = default;
  ImageSize(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) {
      throw SchemaError("image size must be at least 1x1");
    }
  }
};

/// Coordinate conventions of the evaluated model interfaces.
enum class CoordConvention {
  XyxyAbs,      // (x_min, y_min, x_max, y_max), absolute pixels
  YxyxAbs,      // (y_min, x_min, y_max, x_max), absolute pixels
  XyxyNorm01,   // xyxy normalized to [0, 1]
  XyxyRel1000,  // xyxy scaled to [0, 1000]
};

inline const char* to_string(CoordConvention c) {
  switch (c) {
    case CoordConvention::XyxyAbs: return "xyxy_abs";
    case CoordConvention::YxyxAbs: return "yxyx_abs";
    case CoordConvention::XyxyNorm01: return "xyxy_norm01";
    case CoordConvention::XyxyRel1000: return "xyxy_rel1000";
  }
  return "?";
}

inline CoordConvention coord_convention_from_string(const std::string& s) {
  if (s == "xyxy_abs") return CoordConvention::XyxyAbs;
  if (s == "yxyx_abs") return CoordConvention::YxyxAbs;
  if (s == "xyxy_norm01") return CoordConvention::XyxyNorm01;
  if (s == "xyxy_rel1000") return CoordConvention::XyxyRel1000;
  throw SchemaError("unknown coordinate convention: " + s);
}

/// Intersection over union of two valid boxes; 0 when disjoint.
inline double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

namespace detail {

// Range tolerance for normalized / rel-1000 inputs.
inline constexpr double kRangeTol = 1e-6;

inline void check_range(double v, double lo, double hi, double tol) {
  if (v < lo - tol || v > hi + tol) {
    throw OutOfRangeError("coordinate " + std::to_string(v) + " outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace detail

/// Convert four interface-convention reals to a canonical absolute-XYXY Box.
/// Throws DegenerateBoxError / OutOfRangeError per the convention's rules.
inline Box to_canonical(const std::array<double, 4>& coords, CoordConvention conv,
                        const ImageSize& image) {
  for (double v : coords) {
    if (!std::isfinite(v)) throw DegenerateBoxError("non-finite coordinate");
  }
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  switch (conv) {
    case CoordConvention::XyxyAbs:
      x0 = coords[0]; y0 = coords[1]; x1 = coords[2]; y1 = coords[3];
      break;
    case CoordConvention::YxyxAbs:
      y0 = coords[0]; x0 = coords[1]; y1 = coords[2]; x1 = coords[3];
      break;
    case CoordConvention::XyxyNorm01:
      for (double v : coords) detail::check_range(v, 0.0, 1.0, detail::kRangeTol);
      x0 = coords[0] * image.width;  y0 = coords[1] * image.height;
      x1 = coords[2] * image.width;  y1 = coords[3] * image.height;
      break;
    case CoordConvention::XyxyRel1000:
      for (double v : coords) detail::check_range(v, 0.0, 1000.0, 1000.0 * detail::kRangeTol);
      x0 = coords[0] * image.width / 1000.0;  y0 = coords[1] * image.height / 1000.0;
      x1 = coords[2] * image.width / 1000.0;  y1 = coords[3] * image.height / 1000.0;
      break;
  }
  if (!(x0 < x1) || !(y0 < y1)) {
    throw DegenerateBoxError("converted box is degenerate");
  }
  return Box(x0, y0, x1, y1);
}

/// Inverse of to_canonical. The box is clamped to the image bounds on entry.
inline std::array<double, 4> from_canonical(const Box& box, CoordConvention conv,
                                            const ImageSize& image) {
  const double w = static_cast<double>(image.width);
  const double h = static_cast<double>(image.height);
  const double x0 = std::clamp(box.x_min, 0.0, w);
  const double y0 = std::clamp(box.y_min, 0.0, h);
  const double x1 = std::clamp(box.x_max, 0.0, w);
  const double y1 = std::clamp(box.y_max, 0.0, h);
  switch (conv) {
    case CoordConvention::XyxyAbs:
      return {x0, y0, x1, y1};
    case CoordConvention::YxyxAbs:
      return {y0, x0, y1, x1};
    case CoordConvention::XyxyNorm01:
      return {x0 / w, y0 / h, x1 / w, y1 / h};
    case CoordConvention::XyxyRel1000:
      return {x0 * 1000.0 / w, y0 * 1000.0 / h, x1 * 1000.0 / w, y1 * 1000.0 / h};
  }
  return {x0, y0, x1, y1};
}

}  // namespace takit
