#pragma once

// Footprint polygons -> fixed-length, location/scale-invariant boundary
// sequences plus the spatial numerics (area, height, orientation).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "epcfusion/error.hpp"

namespace epcfusion::geometry {

inline constexpr std::size_t kBoundaryLength = 128;
inline constexpr double kScaleEpsilon = 1e-8;
inline constexpr double kOrientationTieBreak = 1e-9;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

using Ring = std::vector<Point>;

struct FootprintPolygon {
  std::string uprn;
  Ring points;               // exterior ring, metres
  std::vector<Ring> holes;   // subtracted from area only
  double height = 0.0;
  bool is_closed = false;    // last vertex repeats the first
};

struct BoundarySequence {
  std::vector<Point> points;  // unitless after normalization
  double r_max = 0.0;         // metres, before scaling
  Point centroid;             // metres
};

struct SpatialFeatures {
  double footprint_area = 0.0;  // m^2
  double height = 0.0;          // m
  double orientation = 0.0;     // radians in [0, pi)
};

namespace detail {

// Exterior ring without the closing duplicate vertex.
inline Ring open_ring(const Ring& ring) {
  Ring out = ring;
  while (out.size() > 1 && out.front() == out.back()) out.pop_back();
  return out;
}

inline double edge_length(const Point& a, const Point& b) {
  return std::hypot(b.x - a.x, b.y - a.y);
}

inline double signed_area(const Ring& ring) {
  if (ring.size() < 3) return 0.0;
  // Shift by the first vertex; keeps precision for large projected coordinates.
  const Point origin = ring.front();
  double twice = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % ring.size()];
    twice += (p.x - origin.x) * (q.y - origin.y) - (q.x - origin.x) * (p.y - origin.y);
  }
  return 0.5 * twice;
}

inline double orient(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  const double d1 = orient(q1, q2, p1);
  const double d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1);
  const double d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

}  // namespace detail

inline double perimeter(const Ring& ring) {
  const Ring open = detail::open_ring(ring);
  double total = 0.0;
  for (std::size_t i = 0; i < open.size(); ++i) {
    total += detail::edge_length(open[i], open[(i + 1) % open.size()]);
  }
  return total;
}

// Throws DegenerateGeometry unless the exterior ring has >= 3 distinct finite
// vertices and a non-zero perimeter.
inline void validate(const FootprintPolygon& polygon) {
  const Ring ring = detail::open_ring(polygon.points);
  for (const Point& p : ring) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      fail(ErrorKind::DegenerateGeometry, "non-finite vertex in footprint " + polygon.uprn);
    }
  }
  std::vector<Point> distinct = ring;
  std::sort(distinct.begin(), distinct.end(),
            [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    fail(ErrorKind::DegenerateGeometry, "footprint " + polygon.uprn + " has fewer than 3 distinct vertices");
  }
  if (!(perimeter(ring) > 0.0)) {
    fail(ErrorKind::DegenerateGeometry, "footprint " + polygon.uprn + " has zero perimeter");
  }
}

// True when two non-adjacent edges of the ring touch or cross.
inline bool is_self_intersecting(const Ring& ring) {
  const Ring open = detail::open_ring(ring);
  const std::size_t n = open.size();
  if (n < 4) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (detail::segments_intersect(open[i], open[(i + 1) % n], open[j], open[(j + 1) % n])) return true;
    }
  }
  return false;
}

// Absolute shoelace area of the exterior ring minus the hole areas.
inline double footprint_area(const FootprintPolygon& polygon) {
  double area = std::abs(detail::signed_area(detail::open_ring(polygon.points)));
  for (const Ring& hole : polygon.holes) area -= std::abs(detail::signed_area(detail::open_ring(hole)));
  if (!(area > 0.0) || !std::isfinite(area)) {
    fail(ErrorKind::DegenerateGeometry, "footprint " + polygon.uprn + " has zero area");
  }
  return area;
}

/// Equal arc-length resampling of the closed exterior ring.
///
/// Point i sits at arc length i * perimeter / count measured from the first
/// stored vertex, walking the ring in stored order.
inline std::vector<Point> resample_boundary(const FootprintPolygon& polygon, std::size_t count) {
  if (count < 3) fail(ErrorKind::OutOfRange, "boundary length must be >= 3");
  validate(polygon);
  const Ring ring = detail::open_ring(polygon.points);
  const std::size_t n = ring.size();

  std::vector<double> cumulative(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    cumulative[i + 1] = cumulative[i] + detail::edge_length(ring[i], ring[(i + 1) % n]);
  }
  const double total = cumulative[n];
  if (!(total > 0.0)) fail(ErrorKind::DegenerateGeometry, "zero perimeter");

  std::vector<Point> out;
  out.reserve(count);
  std::size_t edge = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double target = total * static_cast<double>(i) / static_cast<double>(count);
    while (edge + 1 < n && cumulative[edge + 1] <= target) ++edge;
    // Skip zero-length edges (repeated vertices).
    while (edge + 1 < n && cumulative[edge + 1] == cumulative[edge]) ++edge;
    const double length = cumulative[edge + 1] - cumulative[edge];
    const double t = length > 0.0 ? std::clamp((target - cumulative[edge]) / length, 0.0, 1.0) : 0.0;
    const Point& a = ring[edge];
    const Point& b = ring[(edge + 1) % n];
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

/// Centre on the point mean and scale by 1 / (r_max + eps).
inline BoundarySequence normalize_boundary(const std::vector<Point>& points) {
  if (points.empty()) fail(ErrorKind::DegenerateGeometry, "empty boundary");
  const Point origin = points.front();
  double sx = 0.0;
  double sy = 0.0;
  for (const Point& p : points) {
    sx += p.x - origin.x;
    sy += p.y - origin.y;
  }
  const double n = static_cast<double>(points.size());
  const double mx = sx / n;
  const double my = sy / n;

  BoundarySequence out;
  out.centroid = {origin.x + mx, origin.y + my};
  out.points.reserve(points.size());
  double r_max = 0.0;
  for (const Point& p : points) {
    const Point c{(p.x - origin.x) - mx, (p.y - origin.y) - my};
    r_max = std::max(r_max, std::hypot(c.x, c.y));
    out.points.push_back(c);
  }
  if (!(r_max > 0.0)) fail(ErrorKind::DegenerateGeometry, "all boundary points identical");
  out.r_max = r_max;
  const double scale = 1.0 / (r_max + kScaleEpsilon);
  for (Point& p : out.points) {
    p.x *= scale;
    p.y *= scale;
  }
  return out;
}

/// Angle of the dominant eigenvector of C = X^T X for centred points X,
/// folded into [0, pi). Returns 0 when the eigenvalue gap is below
/// kOrientationTieBreak * trace (no meaningful long axis).
inline double principal_orientation(const std::vector<Point>& centred) {
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (const Point& p : centred) {
    sxx += p.x * p.x;
    syy += p.y * p.y;
    sxy += p.x * p.y;
  }
  const double trace = sxx + syy;
  const double gap = 2.0 * std::hypot(0.5 * (sxx - syy), sxy);  // lambda1 - lambda2
  if (!(trace > 0.0) || gap < kOrientationTieBreak * trace) return 0.0;
  // Closed form for the major-axis angle of a symmetric 2x2 matrix.
  double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  if (theta < 0.0) theta += std::numbers::pi;
  if (theta >= std::numbers::pi) theta -= std::numbers::pi;
  return theta;
}

struct SpatialEncoding {
  SpatialFeatures features;
  BoundarySequence boundary;
};

inline SpatialEncoding build_spatial_features(const FootprintPolygon& polygon, double height,
                                              std::size_t length = kBoundaryLength) {
  if (!(height >= 0.0) || !std::isfinite(height)) {
    fail(ErrorKind::OutOfRange, "footprint " + polygon.uprn + " has invalid height");
  }
  SpatialEncoding out;
  out.features.footprint_area = footprint_area(polygon);
  out.features.height = height;
  out.boundary = normalize_boundary(resample_boundary(polygon, length));
  out.features.orientation = principal_orientation(out.boundary.points);
  return out;
}

}  // namespace epcfusion::geometry
