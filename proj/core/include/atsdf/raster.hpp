#pragma once

#include <algorithm>
#include <cmath>

#include "atsdf/geometry.hpp"

namespace atsdf {

/// Calls fn(x, y, bary) for every pixel whose center (x + 0.5, y + 0.5) lies
/// inside the 2D triangle abc (edges inclusive), clipped to [0,w) x [0,h).
/// Returns the number of pixels visited.
template <typename Fn>
int rasterize_triangle(const Vec2& a, const Vec2& b, const Vec2& c, int width, int height, Fn&& fn) {
  const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  if (area2 == 0.0) return 0;
  const double min_x = std::min({a.x(), b.x(), c.x()});
  const double max_x = std::max({a.x(), b.x(), c.x()});
  const double min_y = std::min({a.y(), b.y(), c.y()});
  const double max_y = std::max({a.y(), b.y(), c.y()});
  const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y - 0.5)));
  int count = 0;
  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double w0 = ((b.x() - px) * (c.y() - py) - (c.x() - px) * (b.y() - py)) / area2;
      const double w1 = ((c.x() - px) * (a.y() - py) - (a.x() - px) * (c.y() - py)) / area2;
      const double w2 = 1.0 - w0 - w1;
      if (w0 < 0 || w1 < 0 || w2 < 0) continue;
      fn(x, y, Vec3(w0, w1, w2));
      ++count;
    }
  }
  return count;
}

}  // namespace atsdf
