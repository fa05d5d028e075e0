#include "svp/geometry.hpp"

#include <Eigen/Geometry>

namespace svp {

HomLine make_line(const Vec3& raw) {
    const double n = raw.norm();
    if (n < 1e-15) throw DegenerateSegment("line coefficients are all zero");
    Vec3 l = raw / n;
    for (int i = 0; i < 3; ++i) {
        if (l[i] != 0.0) {
            if (l[i] < 0.0) l = -l;
            break;
        }
    }
    return HomLine{l};
}

Mat3 normalize_transform(const ImageFrame& frame) {
    const double s = frame.scale();
    Mat3 h;
    h << 2.0, 0.0, -static_cast<double>(frame.width),
         0.0, 2.0, -static_cast<double>(frame.height),
         0.0, 0.0, s;
    return h / s;
}

Vec2 apply_homography(const Mat3& h, const Vec2& p) {
    const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
    return Vec2(q.x() / q.z(), q.y() / q.z());
}

HomLine segment_to_line(const Segment& seg) {
    if (seg.length() < kDegenerateSegmentEps)
        throw DegenerateSegment("segment endpoints coincide");
    const Vec3 pa(seg.a.x(), seg.a.y(), 1.0);
    const Vec3 pb(seg.b.x(), seg.b.y(), 1.0);
    return make_line(pa.cross(pb));
}

SphereCoord point_to_sphere(const HomPoint& p) {
    const double n = p.norm();
    if (n < 1e-15) throw DegenerateSegment("homogeneous point is zero");
    Vec3 q = p;
    if (q.z() < 0.0) q = -q;
    double beta = std::asin(std::clamp(q.y() / n, -1.0, 1.0));
    double alpha = std::atan2(q.x(), q.z());
    if (std::abs(beta) >= kHalfPi) alpha = 0.0;  // pole: azimuth undefined
    return SphereCoord{alpha, beta};
}

Vec3 sphere_to_point(const SphereCoord& c) {
    const double ca = std::cos(c.alpha), sa = std::sin(c.alpha);
    const double cb = std::cos(c.beta), sb = std::sin(c.beta);
    return Vec3(sa * cb, sb, ca * cb);
}

double line_elevation(const HomLine& l, double alpha) {
    if (std::abs(l.l2()) <= kNearPolarEps)
        throw NearPolarLine("great circle passes near the poles (|l2| ~ 0)");
    const double num = -l.l1() * std::sin(alpha) - l.l3() * std::cos(alpha);
    return std::atan(num / l.l2());
}

double consistency_d1(const HomLine& l, const Vec3& v) {
    return l.coeffs.dot(v);
}

double consistency_d2(const Segment& seg, const HomPoint& v) {
    const Vec2 m = seg.midpoint();
    const Vec3 mh(m.x(), m.y(), 1.0);
    const Vec3 join = mh.cross(v);
    if (join.norm() < 1e-12 * std::max(1.0, v.norm()))
        throw IndeterminateConsistency("point coincides with segment midpoint");

    // Undirected angle between the two image lines, via their 2D normals.
    const Vec2 d = seg.b - seg.a;
    const Vec2 n_seg(-d.y(), d.x());
    const Vec2 n_join(join.x(), join.y());
    const double nn = n_seg.norm() * n_join.norm();
    if (nn < 1e-15)
        throw IndeterminateConsistency("joining line is at infinity");
    const double c = std::clamp(std::abs(n_seg.dot(n_join)) / nn, 0.0, 1.0);
    return 1.0 - c;
}

}  // namespace svp
