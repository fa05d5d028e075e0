#pragma once

#include <array>
#include <span>
#include <vector>

#include "svp/em_refine.hpp"
#include "svp/errors.hpp"
#include "svp/geometry.hpp"

namespace svp {

struct HorizonConfig {
    int n_vp = 20;                // triplet search over this many top candidates
    double theta_z = kPi / 4.0;   // min |beta| of a zenith candidate
    double theta_hor = kPi / 6.0; // max horizon slope
    Vec2 principal = Vec2::Zero();
};

struct HorizonLine {
    HomLine h;  // normalised image coordinates
};

struct Intrinsics {
    double f = 1.0;
    double u0 = 0.0;
    double v0 = 0.0;
};

struct TripletChoice {
    std::array<int, 3> indices{};  // into the candidate list, zenith first
    double score = 0.0;
};

// Best zenith + two horizontal VPs by s_T = (1 - cos(angle to the
// zenith-centre line)) * total support; result depends only on candidate
// content, not input order.
TripletChoice select_triplet(std::span<const VpCandidate> candidates, const HorizonConfig& cfg);

// Weighted least-squares horizon through the non-zenith VPs, constrained
// perpendicular to the zenith-centre line.
HorizonLine fit_horizon(const TripletChoice& t, std::span<const VpCandidate> candidates,
                        const HorizonConfig& cfg);

// Lines in pixel coordinates; max |dy| at the left/right borders over height.
double horizon_error(const HomLine& est, const HomLine& truth, const ImageFrame& frame);

// Mean over errors of 1 - min(e, max_err)/max_err; the normalised area under
// the empirical cumulative curve.
double auc(std::span<const double> errors, double max_err = 0.25);

// Converts a line between normalised and pixel coordinates.
HomLine denormalize_line(const HomLine& l, const ImageFrame& frame);
HomLine normalize_line(const HomLine& l, const ImageFrame& frame);

// Zero-skew square-pixel intrinsics from three orthogonal VPs (image points).
Intrinsics intrinsics_from_triplet(const Vec2& v1, const Vec2& v2, const Vec2& v3);

// f = sqrt(-(v1-c).(v2-c)) from two orthogonal VPs and a known principal point.
double focal_from_pair(const Vec2& v1, const Vec2& v2, const Vec2& c);

enum class Axis { kX, kY, kZ };

// H = K R K^-1 with R the minimal rotation taking the back-projection of v
// onto the chosen camera axis.
Mat3 rectify_homography(const Intrinsics& k, const HomPoint& v, Axis axis);

}  // namespace svp
