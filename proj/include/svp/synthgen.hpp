#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svp/geometry.hpp"
#include "svp/rng.hpp"

namespace svp {

struct IntRange {
    int lo = 0;
    int hi = 0;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
};

enum class NoiseKind { kUniform, kGaussian };

struct SynthConfig {
    IntRange k_d_range{1, 6};
    // Several spatially spread clusters per direction keep each pencil's
    // geometry well conditioned (VPs are poorly constrained by segments that
    // are all nearly collinear).
    IntRange clusters_per_direction{4, 8};
    IntRange segments_per_cluster{2, 6};
    IntRange outlier_count{2, 10};
    NoiseKind noise_kind = NoiseKind::kUniform;
    RealRange noise_scale_range{0.0, 0.01};
    RealRange focal_range{0.5, 3.0};
    int examples_per_kd = 6000;
    uint64_t seed = 1;
};

// Virtual pinhole camera: X_cam = R * X_world + t, image point f*(x/z, y/z)
// in normalised coordinates (plane at unit distance).
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double focal = 1.0;
};

// One generated example: labelled 2D segments plus per-direction ground truth.
struct SynthScene {
    std::vector<Segment> segments;
    std::vector<int> labels;  // direction index, -1 for outliers
    std::vector<SphereCoord> true_vps;
    int k_d = 0;
    Camera camera;
};

// k_d unit vanishing directions: the first min(3, k_d) mutually orthogonal,
// the rest unit combinations of two earlier ones, all pairwise more than
// 5 degrees apart.
std::vector<Vec3> sample_directions(int k_d, Rng& rng);

// One full scene: clustered parallel/collinear 3D segments per direction,
// projected, endpoint-noised, cropped to [-1,1]^2 and labelled, plus random
// outliers. Throws DegenerateScene after 20 failed attempts.
SynthScene sample_scene(const SynthConfig& cfg, int k_d, Rng& rng);

// Homogeneous image point of a world direction under the camera.
HomPoint project_direction(const Camera& cam, const Vec3& dir);

// Clips seg to [-1,1]^2. Returns false if nothing (or a fragment shorter than
// min_length) remains.
bool clip_segment(Segment& seg, double min_length);

// Writes examples_per_kd scenes per k_d plus manifest.json; deterministic in
// cfg.seed. Returns the manifest path.
std::string make_dataset(const SynthConfig& cfg, const std::string& out_dir);

SynthScene load_scene(const std::string& path);
void save_scene(const SynthScene& scene, const std::string& path);

// Scene files listed by a dataset manifest, in manifest order.
std::vector<std::string> manifest_scene_files(const std::string& manifest_path);

constexpr double kMinSegmentLength = 0.02;
constexpr double kMinDirectionSeparation = 5.0 * kPi / 180.0;

}  // namespace svp
