#include "svp/horizon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace svp {

namespace {

constexpr double kInfiniteVpEps = 1e-9;   // |v3| below this: VP at infinity
constexpr double kCoincidentVpAngle = 0.5 * kPi / 180.0;

// Undirected angle between the direction vectors of two homogeneous lines.
double line_angle(const Vec3& l, const Vec3& m) {
    const Vec2 dl(l.y(), -l.x());
    const Vec2 dm(m.y(), -m.x());
    const double denom = dl.norm() * dm.norm();
    if (denom < 1e-15) return 0.0;
    return std::acos(std::clamp(std::abs(dl.dot(dm)) / denom, 0.0, 1.0));
}

// Slope of a line against the horizontal, in [0, pi/2].
double line_slope(const Vec3& l) {
    return std::atan2(std::abs(l.x()), std::abs(l.y()));
}

Vec3 zenith_center_line(const Vec3& vz, const Vec2& principal) {
    return vz.cross(Vec3(principal.x(), principal.y(), 1.0));
}

bool lex_less(const Vec3& a, const Vec3& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
}

}  // namespace

TripletChoice select_triplet(std::span<const VpCandidate> candidates, const HorizonConfig& cfg) {
    if (candidates.size() < 3) throw NoValidTriplet("need at least 3 candidates");

    // top n_vp by support, content-ordered so the result is independent of
    // the input ordering
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (candidates[a].support != candidates[b].support)
            return candidates[a].support > candidates[b].support;
        return lex_less(candidates[a].v, candidates[b].v);
    });
    if (static_cast<int>(order.size()) > cfg.n_vp) order.resize(cfg.n_vp);

    std::vector<int> zenith, horizontal;
    for (int idx : order) {
        const SphereCoord s = point_to_sphere(candidates[idx].v);
        (std::abs(s.beta) > cfg.theta_z ? zenith : horizontal).push_back(idx);
    }
    if (zenith.empty()) throw NoValidTriplet("no zenith candidate above theta_z");
    if (horizontal.size() < 2) throw NoValidTriplet("fewer than 2 horizontal candidates");

    TripletChoice best;
    best.score = -1.0;
    long best_support = -1;
    std::array<int, 3> best_rank{};  // positions in the sorted order, for tie-breaks

    auto rank_of = [&](int idx) {
        return static_cast<int>(std::find(order.begin(), order.end(), idx) - order.begin());
    };

    for (int z : zenith) {
        const Vec3 lzc = zenith_center_line(candidates[z].v, cfg.principal);
        // the constrained fit runs along (lzc1, lzc2); reject zeniths whose
        // implied horizon slope already breaks the cap
        if (std::atan2(std::abs(lzc.y()), std::abs(lzc.x())) > cfg.theta_hor) continue;

        for (size_t a = 0; a < horizontal.size(); ++a)
            for (size_t b = a + 1; b < horizontal.size(); ++b) {
                const int i = horizontal[a], j = horizontal[b];
                if (std::acos(std::clamp(std::abs(candidates[i].v.dot(candidates[j].v)), 0.0,
                                         1.0)) < kCoincidentVpAngle)
                    continue;  // coincident horizontal VPs
                const Vec3 tentative = candidates[i].v.cross(candidates[j].v);
                if (tentative.head<2>().norm() < 1e-12) continue;  // degenerate join
                if (line_slope(tentative) > cfg.theta_hor) continue;
                const double phi = line_angle(tentative, lzc);
                const long support = candidates[z].support + candidates[i].support +
                                     candidates[j].support;
                const double score = (1.0 - std::cos(phi)) * static_cast<double>(support);
                const std::array<int, 3> rank{rank_of(z), rank_of(i), rank_of(j)};
                const bool better =
                    score > best.score ||
                    (score == best.score &&
                     (support > best_support || (support == best_support && rank < best_rank)));
                if (better) {
                    best.score = score;
                    best_support = support;
                    best_rank = rank;
                    best.indices = {z, i, j};
                }
            }
    }
    if (best.score < 0.0) throw NoValidTriplet("no triplet passed the slope filters");
    return best;
}

HorizonLine fit_horizon(const TripletChoice& t, std::span<const VpCandidate> candidates,
                        const HorizonConfig& cfg) {
    const Vec3& vz = candidates[t.indices[0]].v;
    const Vec3 lzc = zenith_center_line(vz, cfg.principal);

    // unit normal of the horizon: perpendicular to the normal of lzc
    Vec2 nz(lzc.x(), lzc.y());
    const double nz_norm = nz.norm();
    if (nz_norm < 1e-15) throw DegenerateFit("zenith-centre line has no direction");
    const Vec2 n(-lzc.y() / nz_norm, lzc.x() / nz_norm);

    double num = 0.0, den = 0.0;
    for (int m = 1; m < 3; ++m) {
        const VpCandidate& c = candidates[t.indices[m]];
        if (std::abs(c.v.z()) < kInfiniteVpEps) continue;  // weight -> 0 at infinity
        const Vec2 p(c.v.x() / c.v.z(), c.v.y() / c.v.z());
        const double w = static_cast<double>(std::max(1, c.support)) / (p - cfg.principal).norm();
        if (!std::isfinite(w)) continue;  // VP exactly on the principal point
        num += w * n.dot(p);
        den += w;
    }
    if (den <= 0.0) throw DegenerateFit("both horizontal VPs are at infinity");
    const double c0 = num / den;
    return HorizonLine{make_line(Vec3(n.x(), n.y(), -c0))};
}

double horizon_error(const HomLine& est, const HomLine& truth, const ImageFrame& frame) {
    if (!frame.valid()) throw EmptyInput("horizon_error: empty frame");
    if (std::abs(est.l2()) < 1e-9 || std::abs(truth.l2()) < 1e-9)
        throw VerticalLine("horizon line cannot be evaluated as y(x)");
    auto y_at = [](const HomLine& l, double x) { return -(l.l1() * x + l.l3()) / l.l2(); };
    const double e0 = std::abs(y_at(est, 0.0) - y_at(truth, 0.0));
    const double e1 = std::abs(y_at(est, frame.width) - y_at(truth, frame.width));
    return std::max(e0, e1) / static_cast<double>(frame.height);
}

double auc(std::span<const double> errors, double max_err) {
    if (errors.empty()) throw EmptyInput("auc of no errors");
    if (max_err <= 0.0) throw Error("auc: max_err must be positive");
    double sum = 0.0;
    for (double e : errors) sum += 1.0 - std::min(e, max_err) / max_err;
    return sum / static_cast<double>(errors.size());
}

HomLine denormalize_line(const HomLine& l, const ImageFrame& frame) {
    // points map by p_norm = H p_pix, so lines map by l_pix = H^T l_norm
    return make_line(normalize_transform(frame).transpose() * l.coeffs);
}

HomLine normalize_line(const HomLine& l, const ImageFrame& frame) {
    return make_line(normalize_transform(frame).inverse().transpose() * l.coeffs);
}

Intrinsics intrinsics_from_triplet(const Vec2& v1, const Vec2& v2, const Vec2& v3) {
    const std::array<Vec2, 3> v{v1, v2, v3};
    const double area = std::abs((v2 - v1).x() * (v3 - v1).y() - (v2 - v1).y() * (v3 - v1).x());
    const double scale = std::max({1.0, (v2 - v1).norm(), (v3 - v1).norm()});
    if (area < 1e-12 * scale * scale) throw CollinearTriplet("triplet spans no area");

    // rows: w1 (xi xj + yi yj) + w2 (xi + xj) + w3 (yi + yj) + w4 = 0
    Eigen::Matrix<double, 3, 4> a;
    int row = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j, ++row)
            a.row(row) << v[i].dot(v[j]), v[i].x() + v[j].x(), v[i].y() + v[j].y(), 1.0;

    const Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(a, Eigen::ComputeFullV);
    const Eigen::Vector4d w = svd.matrixV().col(3);
    if (std::abs(w(0)) < 1e-15) throw ImaginaryFocal("conic is degenerate (w1 = 0)");

    Intrinsics k;
    k.u0 = -w(1) / w(0);
    k.v0 = -w(2) / w(0);
    const double f2 = w(3) / w(0) - k.u0 * k.u0 - k.v0 * k.v0;
    if (f2 <= 0.0) throw ImaginaryFocal("triplet is not orthogonal (f^2 <= 0)");
    k.f = std::sqrt(f2);
    return k;
}

double focal_from_pair(const Vec2& v1, const Vec2& v2, const Vec2& c) {
    const double f2 = -(v1 - c).dot(v2 - c);
    if (f2 <= 0.0) throw ImaginaryFocal("VP pair is not orthogonal from c");
    return std::sqrt(f2);
}

Mat3 rectify_homography(const Intrinsics& k, const HomPoint& v, Axis axis) {
    if (k.f <= 0.0) throw Error("rectify_homography: invalid intrinsics");
    Mat3 km;
    km << k.f, 0, k.u0, 0, k.f, k.v0, 0, 0, 1;
    const Mat3 kinv = km.inverse();

    Vec3 d = (kinv * v).normalized();
    Vec3 e = Vec3::Zero();
    e(axis == Axis::kX ? 0 : axis == Axis::kY ? 1 : 2) = 1.0;
    if (d.dot(e) < 0) d = -d;  // a VP fixes a direction only up to sign

    Mat3 r;
    const double c = std::clamp(d.dot(e), -1.0, 1.0);
    Vec3 axis_v = d.cross(e);
    const double s = axis_v.norm();
    if (s < 1e-15) {
        r = Mat3::Identity();  // already aligned (antipodal excluded by the sign flip)
    } else {
        axis_v /= s;
        const double angle = std::atan2(s, c);
        r = Eigen::AngleAxisd(angle, axis_v).toRotationMatrix();
    }
    return km * r * kinv;
}

}  // namespace svp
