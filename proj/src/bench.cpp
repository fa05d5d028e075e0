#include "svp/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "svp/synthgen.hpp"

namespace svp {

namespace fs = std::filesystem;

namespace {

constexpr double kMatchAngle = 5.0 * kPi / 180.0;

HomLine gt_horizon_line(const GroundTruth& gt) {
    const Vec3 p0(gt.horizon[0].x(), gt.horizon[0].y(), 1.0);
    const Vec3 p1(gt.horizon[1].x(), gt.horizon[1].y(), 1.0);
    return make_line(p0.cross(p1));
}

struct ImageOutcome {
    BenchImageRow row;
    int gt_vps = 0;
    int matched_vps = 0;
};

ImageOutcome process_image(const fs::path& seg_path, const fs::path& gt_path,
                           const CoarsePredictor& predictor, const BenchConfig& cfg,
                           const std::string& name) {
    ImageOutcome out;
    out.row.name = name;
    try {
        const SegmentsFile input = load_segments(seg_path.string());
        const GroundTruth gt = load_ground_truth(gt_path.string());
        const DetectionResult r = detect(input, predictor, cfg.detect);
        const HomLine est_px = denormalize_line(r.horizon.h, input.frame);
        out.row.error = horizon_error(est_px, gt_horizon_line(gt), input.frame);

        if (!gt.vps.empty()) {
            const Mat3 h_norm = normalize_transform(input.frame);
            for (const Vec2& vp_px : gt.vps) {
                const Vec2 p = apply_homography(h_norm, vp_px);
                const Vec3 truth = Vec3(p.x(), p.y(), 1.0).normalized();
                ++out.gt_vps;
                for (const VpCandidate& c : r.vps) {
                    const double angle =
                        std::acos(std::clamp(std::abs(truth.dot(c.v)), 0.0, 1.0));
                    if (angle <= kMatchAngle) {
                        ++out.matched_vps;
                        break;
                    }
                }
            }
        }
    } catch (const Error& e) {
        out.row.failed = true;
        out.row.error = cfg.max_err;
        std::fprintf(stderr, "bench: %s failed: %s\n", name.c_str(), e.what());
        // ground truth may still contribute unmatched VPs
        try {
            const GroundTruth gt = load_ground_truth(gt_path.string());
            out.gt_vps = static_cast<int>(gt.vps.size());
        } catch (const Error&) {
        }
    }
    return out;
}

void write_errors_csv(const std::vector<BenchImageRow>& rows, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    f << "name,error,failed\n";
    char buf[64];
    for (const BenchImageRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.10g", r.error);
        f << r.name << "," << buf << "," << (r.failed ? 1 : 0) << "\n";
    }
}

void write_cumulative_csv(const std::vector<double>& errors, double max_err,
                          const fs::path& path, std::vector<Vec2>* curve) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    f << "error,fraction\n";
    char buf[128];
    for (int i = 0; i <= 100; ++i) {
        const double x = max_err * i / 100.0;
        const double frac =
            errors.empty()
                ? 0.0
                : static_cast<double>(std::count_if(errors.begin(), errors.end(),
                                                    [&](double e) { return e <= x; })) /
                      static_cast<double>(errors.size());
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g", x, frac);
        f << buf << "\n";
        if (curve) curve->push_back(Vec2(x, frac));
    }
}

void write_curve_svg(const std::vector<Vec2>& curve, double max_err, double auc_value,
                     const fs::path& path) {
    const int w = 440, h = 340, ml = 50, mr = 20, mt = 20, mb = 40;
    const int pw = w - ml - mr, ph = h - mt - mb;
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
    f << "<polyline fill=\"none\" stroke=\"blue\" stroke-width=\"2\" points=\"";
    for (const Vec2& p : curve) {
        const double x = ml + p.x() / max_err * pw;
        const double y = mt + (1.0 - p.y()) * ph;
        f << x << "," << y << " ";
    }
    f << "\"/>\n";
    f << "<text x=\"" << ml << "\" y=\"" << h - 10 << "\" font-size=\"12\">0</text>\n"
      << "<text x=\"" << ml + pw - 30 << "\" y=\"" << h - 10 << "\" font-size=\"12\">" << max_err
      << "</text>\n"
      << "<text x=\"8\" y=\"" << mt + 8 << "\" font-size=\"12\">1</text>\n"
      << "<text x=\"8\" y=\"" << mt + ph << "\" font-size=\"12\">0</text>\n"
      << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 << "\" font-size=\"12\">AUC "
      << auc_value << "</text>\n</svg>\n";
}

}  // namespace

int resolve_thread_count(int requested) {
    int n = requested > 0 ? requested
                          : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    if (const char* cap = std::getenv("SPHERE_VP_THREADS")) {
        const int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return std::max(1, n);
}

BenchSummary run_bench(const std::string& dataset_dir, const CoarsePredictor& predictor,
                       const BenchConfig& cfg, const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    if (!fs::is_directory(dataset_dir)) throw IoError("not a directory: " + dataset_dir);
    fs::create_directories(out_dir);

    constexpr const char* kSegSuffix = ".segments.json";
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > std::strlen(kSegSuffix) &&
            name.compare(name.size() - std::strlen(kSegSuffix), std::string::npos, kSegSuffix) == 0)
            stems.push_back(name.substr(0, name.size() - std::strlen(kSegSuffix)));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw IoError("no *.segments.json files in " + dataset_dir);

    std::vector<ImageOutcome> outcomes(stems.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= stems.size()) return;
            const fs::path seg = fs::path(dataset_dir) / (stems[i] + kSegSuffix);
            const fs::path gt = fs::path(dataset_dir) / (stems[i] + ".gt.json");
            outcomes[i] = process_image(seg, gt, predictor, cfg, stems[i]);
        }
    };
    const int n_threads = std::min<int>(resolve_thread_count(cfg.threads),
                                        static_cast<int>(stems.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    BenchSummary summary;
    summary.n_images = static_cast<int>(stems.size());
    std::vector<double> errors;
    long gt_vps = 0, matched = 0;
    for (const ImageOutcome& o : outcomes) {
        summary.rows.push_back(o.row);
        errors.push_back(o.row.error);
        summary.n_failures += o.row.failed ? 1 : 0;
        gt_vps += o.gt_vps;
        matched += o.matched_vps;
    }
    summary.auc = auc(errors, cfg.max_err);
    summary.mean_err = std::accumulate(errors.begin(), errors.end(), 0.0) / errors.size();
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    summary.median_err = sorted.size() % 2 == 1
                             ? sorted[sorted.size() / 2]
                             : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    summary.has_orthogonal = gt_vps > 0;
    if (summary.has_orthogonal)
        summary.orthogonal_accuracy_at_5deg = static_cast<double>(matched) / gt_vps;
    summary.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    write_errors_csv(summary.rows, fs::path(out_dir) / "errors.csv");
    std::vector<Vec2> curve;
    write_cumulative_csv(errors, cfg.max_err, fs::path(out_dir) / "cumulative.csv", &curve);
    write_curve_svg(curve, cfg.max_err, summary.auc, fs::path(out_dir) / "curve.svg");

    nlohmann::json j{{"auc", summary.auc},
                     {"max_err", cfg.max_err},
                     {"mean_err", summary.mean_err},
                     {"median_err", summary.median_err},
                     {"n_images", summary.n_images},
                     {"n_failures", summary.n_failures},
                     {"wall_time_s", summary.wall_time_s}};
    if (summary.has_orthogonal)
        j["orthogonal_accuracy_at_5deg"] = summary.orthogonal_accuracy_at_5deg;
    std::ofstream f(fs::path(out_dir) / "summary.json");
    if (!f) throw IoError("cannot write summary.json");
    f << j.dump(2) << "\n";
    return summary;
}

void make_manhattan_benchmark(const std::string& out_dir, int count, uint64_t seed,
                              int frame_side) {
    fs::create_directories(out_dir);
    const ImageFrame frame{frame_side, frame_side};
    const double s = frame.scale();

    SynthConfig cfg;
    cfg.noise_kind = NoiseKind::kUniform;
    cfg.noise_scale_range = {0.0, 0.004};
    cfg.outlier_count = {1, 4};
    // many spatially spread clusters per direction: keeps each pencil's
    // scatter matrix well conditioned and its accumulator peak compact
    cfg.clusters_per_direction = {5, 9};
    cfg.segments_per_cluster = {3, 6};

    const HorizonConfig hcfg;
    const double beta_margin = 0.05, slope_margin = 0.05;

    auto to_px = [&](const Vec2& p) {
        return Vec2((p.x() * s + frame.width) / 2.0, (p.y() * s + frame.height) / 2.0);
    };

    for (int i = 0; i < count; ++i) {
        Rng rng(stream_seed(seed, static_cast<uint64_t>(i)));
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000)
                throw DegenerateScene("no valid Manhattan scene for index " +
                                      std::to_string(i));
            const SynthScene scene = sample_scene(cfg, 3, rng);
            if (scene.segments.size() < 12) continue;

            std::array<Vec3, 3> v;
            for (int d = 0; d < 3; ++d) v[d] = sphere_to_point(scene.true_vps[d]);
            int zenith = 0;
            for (int d = 1; d < 3; ++d)
                if (std::abs(scene.true_vps[d].beta) > std::abs(scene.true_vps[zenith].beta))
                    zenith = d;
            const int h1 = (zenith + 1) % 3, h2 = (zenith + 2) % 3;

            if (std::abs(scene.true_vps[zenith].beta) <= hcfg.theta_z + beta_margin) continue;
            if (std::abs(scene.true_vps[h1].beta) >= hcfg.theta_z - beta_margin) continue;
            if (std::abs(scene.true_vps[h2].beta) >= hcfg.theta_z - beta_margin) continue;
            bool finite = true;
            for (const Vec3& vv : v) finite = finite && std::abs(vv.z()) >= 0.02;
            if (!finite) continue;
            if (std::acos(std::clamp(std::abs(v[h1].dot(v[h2])), 0.0, 1.0)) < kPi / 180.0)
                continue;

            const HomLine horizon_n = make_line(v[h1].cross(v[h2]));
            if (std::atan2(std::abs(horizon_n.l1()), std::abs(horizon_n.l2())) >
                hcfg.theta_hor - slope_margin)
                continue;

            // passed all filters: emit the pair
            SegmentsFile segs;
            segs.frame = frame;
            for (const Segment& seg : scene.segments)
                segs.segments.push_back(Segment{to_px(seg.a), to_px(seg.b)});

            GroundTruth gt;
            gt.frame = frame;
            const HomLine horizon_px = denormalize_line(horizon_n, frame);
            auto y_at = [&](double x) {
                return -(horizon_px.l1() * x + horizon_px.l3()) / horizon_px.l2();
            };
            gt.horizon = {Vec2(0.0, y_at(0.0)), Vec2(frame.width, y_at(frame.width))};
            for (int d = 0; d < 3; ++d)
                gt.vps.push_back(to_px(Vec2(v[d].x() / v[d].z(), v[d].y() / v[d].z())));

            char stem[32];
            std::snprintf(stem, sizeof(stem), "scene_%04d", i);
            save_segments(segs, (fs::path(out_dir) / (std::string(stem) + ".segments.json")).string());
            save_ground_truth(gt, (fs::path(out_dir) / (std::string(stem) + ".gt.json")).string());
            break;
        }
    }
}

}  // namespace svp
