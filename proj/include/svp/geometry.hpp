#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "svp/errors.hpp"

namespace svp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using HomPoint = Vec3;

constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfPi = 0.5 * kPi;

// |l2| below this, the elevation curve beta(alpha) is numerically meaningless
// and the great circle is handled by the swapped alpha(beta) parametrisation.
constexpr double kNearPolarEps = 1e-6;

constexpr double kDegenerateSegmentEps = 1e-9;

// Pixel dimensions of the source image; the normalisation scale is the
// longest side.
struct ImageFrame {
    int width = 0;
    int height = 0;

    double scale() const { return static_cast<double>(std::max(width, height)); }
    bool valid() const { return width > 0 && height > 0; }
};

// Azimuth/elevation on the front half of the Gaussian sphere, both in
// [-pi/2, pi/2]. At the poles (|beta| = pi/2) alpha is canonically 0.
struct SphereCoord {
    double alpha = 0.0;
    double beta = 0.0;
};

// 2D line segment in normalised image coordinates.
struct Segment {
    Vec2 a = Vec2::Zero();
    Vec2 b = Vec2::Zero();

    Vec2 midpoint() const { return 0.5 * (a + b); }
    double length() const { return (b - a).norm(); }
};

// Homogeneous image line. Invariant: unit norm, first nonzero coefficient
// non-negative. Build through make_line/segment_to_line only.
struct HomLine {
    Vec3 coeffs = Vec3::Zero();

    double l1() const { return coeffs.x(); }
    double l2() const { return coeffs.y(); }
    double l3() const { return coeffs.z(); }
};

// Normalises raw line coefficients to canonical form.
HomLine make_line(const Vec3& raw);

// Aspect-ratio preserving map of pixel coordinates into (-1,1)x(-1,1);
// the longest image side spans exactly (-1,1).
Mat3 normalize_transform(const ImageFrame& frame);

Vec2 apply_homography(const Mat3& h, const Vec2& p);

// Join of the two endpoints, in canonical form. Throws DegenerateSegment if
// the endpoints are closer than kDegenerateSegmentEps.
HomLine segment_to_line(const Segment& seg);

// Inverse gnomonic projection of a homogeneous image point onto the front
// half of the Gaussian sphere (image plane at unit distance).
SphereCoord point_to_sphere(const HomPoint& p);

// (sin a cos b, sin b, cos a cos b); unit norm, inverse of point_to_sphere
// on the front half-sphere.
Vec3 sphere_to_point(const SphereCoord& c);

// Elevation of the line's great circle at azimuth alpha. Throws
// NearPolarLine when |l2| <= kNearPolarEps.
double line_elevation(const HomLine& l, double alpha);

// Signed great-circle consistency l.v; zero iff v lies on the circle.
double consistency_d1(const HomLine& l, const Vec3& v);

// Angle consistency between a segment and a point hypothesis: 1 - cos of the
// undirected angle between the segment's line and the line joining the
// segment midpoint with v. Range [0,1]. Throws IndeterminateConsistency when
// v coincides with the midpoint.
double consistency_d2(const Segment& seg, const HomPoint& v);

}  // namespace svp
