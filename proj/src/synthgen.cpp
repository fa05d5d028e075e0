#include "svp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace svp {

namespace {

using nlohmann::json;

constexpr double kWorldBoxHalf = 2.0;      // cluster centres in a box of side 4
constexpr double kClusterJitter = 0.3;     // max offset from the cluster line
constexpr double kCollinearFraction = 0.3; // fraction of segments with no offset
constexpr double kMinDepth = 0.05;

double undirected_angle(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0));
}

struct Projector {
    const Camera& cam;

    // Returns false if the endpoint is too close to the camera plane.
    bool operator()(const Vec3& world, Vec2& out) const {
        const Vec3 pc = cam.rotation * world + cam.translation;
        if (pc.z() < kMinDepth) return false;
        out = Vec2(cam.focal * pc.x() / pc.z(), cam.focal * pc.y() / pc.z());
        return true;
    }
};

}  // namespace

std::vector<Vec3> sample_directions(int k_d, Rng& rng) {
    std::vector<Vec3> dirs;
    dirs.reserve(k_d);
    const Mat3 basis = rng.rotation();
    for (int i = 0; i < std::min(3, k_d); ++i) dirs.push_back(basis.col(i));

    while (static_cast<int>(dirs.size()) < k_d) {
        int p = rng.uniform_int(0, static_cast<int>(dirs.size()) - 1);
        int q = rng.uniform_int(0, static_cast<int>(dirs.size()) - 1);
        if (p == q) continue;
        double ca = rng.uniform(-1.0, 1.0);
        double cb = rng.uniform(-1.0, 1.0);
        if (std::abs(ca) < 0.1 || std::abs(cb) < 0.1) continue;
        Vec3 d = ca * dirs[p] + cb * dirs[q];
        const double n = d.norm();
        if (n < 1e-9) continue;
        d /= n;
        bool separated = true;
        for (const Vec3& e : dirs)
            if (undirected_angle(d, e) < kMinDirectionSeparation) separated = false;
        if (separated) dirs.push_back(d);
    }
    return dirs;
}

HomPoint project_direction(const Camera& cam, const Vec3& dir) {
    const Vec3 d = cam.rotation * dir;
    return HomPoint(cam.focal * d.x(), cam.focal * d.y(), d.z());
}

bool clip_segment(Segment& seg, double min_length) {
    // Liang-Barsky against the [-1,1]^2 square.
    const Vec2 d = seg.b - seg.a;
    double t0 = 0.0, t1 = 1.0;
    const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
    const double q[4] = {seg.a.x() + 1.0, 1.0 - seg.a.x(), seg.a.y() + 1.0, 1.0 - seg.a.y()};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return false;  // parallel and outside
        } else {
            const double r = q[i] / p[i];
            if (p[i] < 0.0) {
                if (r > t1) return false;
                t0 = std::max(t0, r);
            } else {
                if (r < t0) return false;
                t1 = std::min(t1, r);
            }
        }
    }
    if (t0 > t1) return false;
    const Vec2 a = seg.a + t0 * d;
    const Vec2 b = seg.a + t1 * d;
    seg.a = a;
    seg.b = b;
    return seg.length() >= min_length;
}

SynthScene sample_scene(const SynthConfig& cfg, int k_d, Rng& rng) {
    for (int attempt = 0; attempt < 20; ++attempt) {
        SynthScene scene;
        scene.k_d = k_d;

        const std::vector<Vec3> dirs = sample_directions(k_d, rng);
        scene.camera.rotation = rng.rotation();
        scene.camera.translation =
            Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(4.0, 8.0));
        scene.camera.focal = rng.uniform(cfg.focal_range.lo, cfg.focal_range.hi);
        const double noise_scale = rng.uniform(cfg.noise_scale_range.lo, cfg.noise_scale_range.hi);
        const Projector project{scene.camera};

        auto add_noise = [&](Vec2& p) {
            if (noise_scale <= 0.0) return;
            for (int i = 0; i < 2; ++i) {
                const double e = cfg.noise_kind == NoiseKind::kUniform
                                     ? rng.uniform(-noise_scale, noise_scale)
                                     : rng.gaussian() * noise_scale;
                p[i] += e;
            }
        };

        auto emit_segment = [&](const Vec3& w1, const Vec3& w2, int label) {
            Vec2 a, b;
            if (!project(w1, a) || !project(w2, b)) return;
            add_noise(a);
            add_noise(b);
            Segment seg{a, b};
            if (!clip_segment(seg, kMinSegmentLength)) return;
            scene.segments.push_back(seg);
            scene.labels.push_back(label);
        };

        auto place_cluster = [&](const Vec3& dir, int label) {
            const Vec3 center(rng.uniform(-kWorldBoxHalf, kWorldBoxHalf),
                              rng.uniform(-kWorldBoxHalf, kWorldBoxHalf),
                              rng.uniform(-kWorldBoxHalf, kWorldBoxHalf));
            const int n_segs = rng.uniform_int(cfg.segments_per_cluster.lo, cfg.segments_per_cluster.hi);
            for (int s = 0; s < n_segs; ++s) {
                Vec3 offset = Vec3::Zero();
                if (!rng.bernoulli(kCollinearFraction)) {
                    Vec3 o = rng.unit_vector() * rng.uniform(0.0, kClusterJitter);
                    offset = o - dir * dir.dot(o);  // keep only the part off the line
                }
                const double pos = rng.uniform(-1.5, 1.5);
                const double half = rng.uniform(0.15, 0.9);
                emit_segment(center + offset + (pos - half) * dir,
                             center + offset + (pos + half) * dir, label);
            }
        };

        bool starved = false;
        for (int di = 0; di < k_d && !starved; ++di) {
            const size_t before = scene.segments.size();
            const int n_clusters =
                rng.uniform_int(cfg.clusters_per_direction.lo, cfg.clusters_per_direction.hi);
            for (int c = 0; c < n_clusters; ++c) place_cluster(dirs[di], di);
            if (scene.segments.size() == before) starved = true;
        }
        if (starved) continue;

        const int n_outliers = rng.uniform_int(cfg.outlier_count.lo, cfg.outlier_count.hi);
        for (int o = 0; o < n_outliers; ++o) {
            const Vec3 center(rng.uniform(-kWorldBoxHalf, kWorldBoxHalf),
                              rng.uniform(-kWorldBoxHalf, kWorldBoxHalf),
                              rng.uniform(-kWorldBoxHalf, kWorldBoxHalf));
            const Vec3 dir = rng.unit_vector();
            const double half = rng.uniform(0.15, 0.9);
            emit_segment(center - half * dir, center + half * dir, -1);
        }

        scene.true_vps.reserve(k_d);
        for (const Vec3& d : dirs)
            scene.true_vps.push_back(point_to_sphere(project_direction(scene.camera, d)));
        return scene;
    }
    throw DegenerateScene("no scene with surviving segments for every direction after 20 attempts");
}

namespace {

json scene_to_json(const SynthScene& scene) {
    json cam;
    cam["R"] = json::array();
    for (int r = 0; r < 3; ++r)
        cam["R"].push_back({scene.camera.rotation(r, 0), scene.camera.rotation(r, 1),
                            scene.camera.rotation(r, 2)});
    cam["t"] = {scene.camera.translation.x(), scene.camera.translation.y(),
                scene.camera.translation.z()};
    cam["f"] = scene.camera.focal;

    json j;
    j["k_d"] = scene.k_d;
    j["camera"] = cam;
    j["true_vps"] = json::array();
    for (const SphereCoord& c : scene.true_vps) j["true_vps"].push_back({c.alpha, c.beta});
    j["segments"] = json::array();
    for (const Segment& s : scene.segments)
        j["segments"].push_back({s.a.x(), s.a.y(), s.b.x(), s.b.y()});
    j["labels"] = scene.labels;
    return j;
}

SynthScene scene_from_json(const json& j) {
    SynthScene scene;
    scene.k_d = j.at("k_d").get<int>();
    const json& cam = j.at("camera");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) scene.camera.rotation(r, c) = cam.at("R")[r][c].get<double>();
    for (int i = 0; i < 3; ++i) scene.camera.translation[i] = cam.at("t")[i].get<double>();
    scene.camera.focal = cam.at("f").get<double>();
    for (const auto& v : j.at("true_vps"))
        scene.true_vps.push_back(SphereCoord{v[0].get<double>(), v[1].get<double>()});
    for (const auto& s : j.at("segments"))
        scene.segments.push_back(Segment{Vec2(s[0].get<double>(), s[1].get<double>()),
                                         Vec2(s[2].get<double>(), s[3].get<double>())});
    scene.labels = j.at("labels").get<std::vector<int>>();
    return scene;
}

}  // namespace

void save_scene(const SynthScene& scene, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << scene_to_json(scene).dump() << "\n";
    if (!f) throw IoError("write failed: " + path);
}

SynthScene load_scene(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json j;
    try {
        f >> j;
        return scene_from_json(j);
    } catch (const json::exception& e) {
        throw IoError("bad scene file " + path + ": " + e.what());
    }
}

std::string make_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    json manifest;
    manifest["seed"] = cfg.seed;
    manifest["scenes"] = json::array();

    uint64_t index = 0;
    for (int k_d = cfg.k_d_range.lo; k_d <= cfg.k_d_range.hi; ++k_d) {
        for (int e = 0; e < cfg.examples_per_kd; ++e, ++index) {
            const uint64_t scene_seed = stream_seed(cfg.seed, index);
            Rng rng(scene_seed);
            const SynthScene scene = sample_scene(cfg, k_d, rng);
            char name[32];
            std::snprintf(name, sizeof(name), "scene_%06llu.json",
                          static_cast<unsigned long long>(index));
            save_scene(scene, (fs::path(out_dir) / name).string());
            manifest["scenes"].push_back({{"file", name}, {"k_d", k_d}, {"seed", scene_seed}});
        }
    }

    const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream f(manifest_path);
    if (!f) throw IoError("cannot open " + manifest_path);
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError("write failed: " + manifest_path);
    return manifest_path;
}

std::vector<std::string> manifest_scene_files(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open " + manifest_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("bad manifest " + manifest_path + ": " + e.what());
    }
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    std::vector<std::string> files;
    for (const auto& s : j.at("scenes")) files.push_back((dir / s.at("file").get<std::string>()).string());
    return files;
}

}  // namespace svp
