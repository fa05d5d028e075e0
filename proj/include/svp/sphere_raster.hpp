#pragma once

#include <span>
#include <string>
#include <vector>

#include "svp/geometry.hpp"

namespace svp {

// Binary image of the sphere's front half surface. Pixel (u, v) has its
// centre at (alpha, beta) = ((u+0.5)/S*pi - pi/2, (v+0.5)/S*pi - pi/2);
// u indexes azimuth, v elevation.
struct SphereImage {
    int resolution = 0;
    std::vector<float> intensities;  // v-major, resolution^2 values in [0,1]

    float at(int u, int v) const { return intensities[static_cast<size_t>(v) * resolution + u]; }
    float& at(int u, int v) { return intensities[static_cast<size_t>(v) * resolution + u]; }
};

// Per-bin vanishing point scores on the regular n x n grid over
// (alpha, beta)-space. Row-major with elevation as the row (beta-major).
struct BinGrid {
    int n = 0;
    std::vector<double> values;

    double at(int row, int col) const { return values[static_cast<size_t>(row) * n + col]; }
};

// Activation floor below which grid responses are treated as noise.
constexpr double kDefaultThetaAct = 0.05;

// Gaussian width of the accumulator baseline in great-circle distance.
constexpr double kDefaultSigmaAcc = 0.02;

// Renders each line's great circle as an opaque 1-pixel curve (max
// composition). Shallow stretches are traced as beta(alpha) over the columns,
// steep/near-polar ones additionally as alpha(beta) over the rows, so curves
// stay gap-free.
SphereImage render_sphere_image(std::span<const HomLine> lines, int resolution);

// Bin quantisation of a sphere coordinate; row = elevation, col = azimuth.
int vp_to_bin(const SphereCoord& c, int n);

// Centre coordinate of a bin; inverse of vp_to_bin up to quantisation.
SphereCoord bin_center(int index, int n);

// Non-learned baseline predictor: mean Gaussian vote of every line's
// great-circle distance to each bin centre.
BinGrid accumulator_predict(std::span<const HomLine> lines, int n, double sigma_acc = kDefaultSigmaAcc);

// Up to k bin indices that are 8-neighbourhood maxima above theta_act,
// strongest first, ties broken by lower index.
std::vector<int> local_maxima(const BinGrid& grid, int k, double theta_act = kDefaultThetaAct);

// Debug exports.
void write_pgm(const SphereImage& img, const std::string& path);
void write_csv(const BinGrid& grid, const std::string& path);

}  // namespace svp
