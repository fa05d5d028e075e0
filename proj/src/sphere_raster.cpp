#include "svp/sphere_raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace svp {

namespace {

inline double axis_center(int i, int s) {
    return (i + 0.5) / s * kPi - kHalfPi;
}

inline int axis_index(double angle, int s) {
    const int i = static_cast<int>(std::floor((angle + kHalfPi) / kPi * s));
    return std::clamp(i, 0, s - 1);
}

// Solutions of l1 sin(a) + l3 cos(a) = rhs within [-pi/2, pi/2].
// Writes up to two azimuths into out; returns the count.
int solve_azimuth(double l1, double l3, double rhs, double* out) {
    const double r = std::hypot(l1, l3);
    if (r < 1e-15) return 0;
    const double t = rhs / r;
    if (std::abs(t) > 1.0) return 0;
    const double phi = std::atan2(l3, l1);
    const double base = std::asin(std::clamp(t, -1.0, 1.0));
    int count = 0;
    for (const double branch : {base, kPi - base}) {
        for (const double k : {-2.0 * kPi, 0.0, 2.0 * kPi}) {
            const double a = branch + k - phi;
            if (a >= -kHalfPi && a <= kHalfPi) {
                bool dup = false;
                for (int i = 0; i < count; ++i)
                    if (std::abs(out[i] - a) < 1e-12) dup = true;
                if (!dup && count < 2) out[count++] = a;
            }
        }
    }
    return count;
}

}  // namespace

SphereImage render_sphere_image(std::span<const HomLine> lines, int resolution) {
    SphereImage img;
    img.resolution = resolution;
    img.intensities.assign(static_cast<size_t>(resolution) * resolution, 0.0f);

    for (const HomLine& l : lines) {
        // beta(alpha) across the columns
        if (std::abs(l.l2()) > 1e-15) {
            for (int u = 0; u < resolution; ++u) {
                const double alpha = axis_center(u, resolution);
                const double num = -l.l1() * std::sin(alpha) - l.l3() * std::cos(alpha);
                const double beta = std::atan(num / l.l2());
                img.at(u, axis_index(beta, resolution)) = 1.0f;
            }
        }
        // alpha(beta) across the rows; covers the steep stretches where the
        // column trace would leave gaps
        for (int v = 0; v < resolution; ++v) {
            const double beta = axis_center(v, resolution);
            double alphas[2];
            const int count = solve_azimuth(l.l1(), l.l3(), -l.l2() * std::tan(beta), alphas);
            for (int i = 0; i < count; ++i)
                img.at(axis_index(alphas[i], resolution), v) = 1.0f;
        }
    }
    return img;
}

int vp_to_bin(const SphereCoord& c, int n) {
    const int row = axis_index(c.beta, n);
    const int col = axis_index(c.alpha, n);
    return row * n + col;
}

SphereCoord bin_center(int index, int n) {
    if (index < 0 || index >= n * n)
        throw IndexOutOfRange("bin index " + std::to_string(index) + " outside n^2 = " +
                              std::to_string(n * n));
    const int row = index / n;
    const int col = index % n;
    return SphereCoord{axis_center(col, n), axis_center(row, n)};
}

BinGrid accumulator_predict(std::span<const HomLine> lines, int n, double sigma_acc) {
    if (lines.empty()) throw EmptyInput("accumulator needs at least one line");
    BinGrid grid;
    grid.n = n;
    grid.values.assign(static_cast<size_t>(n) * n, 0.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma_acc * sigma_acc);
    for (int b = 0; b < n * n; ++b) {
        const Vec3 v = sphere_to_point(bin_center(b, n));
        double sum = 0.0;
        for (const HomLine& l : lines) {
            const double d = l.coeffs.dot(v);
            sum += std::exp(-d * d * inv_two_sigma2);
        }
        grid.values[b] = sum / static_cast<double>(lines.size());
    }
    return grid;
}

std::vector<int> local_maxima(const BinGrid& grid, int k, double theta_act) {
    const int n = grid.n;
    std::vector<std::pair<double, int>> peaks;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double val = grid.at(r, c);
            if (val <= theta_act) continue;
            bool is_max = true;
            for (int dr = -1; dr <= 1 && is_max; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
                    if (grid.at(rr, cc) > val) { is_max = false; break; }
                }
            }
            if (is_max) peaks.emplace_back(val, r * n + c);
        }
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (static_cast<int>(peaks.size()) > k) peaks.resize(k);
    std::vector<int> out;
    out.reserve(peaks.size());
    for (const auto& p : peaks) out.push_back(p.second);
    return out;
}

void write_pgm(const SphereImage& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f << "P5\n" << img.resolution << " " << img.resolution << "\n255\n";
    for (float x : img.intensities) {
        const int q = std::clamp(static_cast<int>(std::lround(x * 255.0f)), 0, 255);
        f.put(static_cast<char>(q));
    }
    if (!f) throw IoError("write failed: " + path);
}

void write_csv(const BinGrid& grid, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f.precision(17);
    for (int r = 0; r < grid.n; ++r) {
        for (int c = 0; c < grid.n; ++c) {
            f << grid.at(r, c);
            f << (c + 1 == grid.n ? '\n' : ',');
        }
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace svp
