// Acceptance checks for the full pipeline: one [PASS]/[FAIL] line per
// criterion, exit code 0 only if every criterion passes.
//
// Usage: svp_acceptance [criterion-number ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "svp/bench.hpp"
#include "svp/coarse_net.hpp"
#include "svp/em_refine.hpp"
#include "svp/geometry.hpp"
#include "svp/horizon.hpp"
#include "svp/pipeline.hpp"
#include "svp/rng.hpp"
#include "svp/sphere_raster.hpp"
#include "svp/synthgen.hpp"

#include "plain_em_ref.hpp"

using namespace svp;
namespace fs = std::filesystem;

namespace {

// Frozen after the first full training run on this configuration.
constexpr int kTrainEpochs = 10;
constexpr double kValBceThreshold = 0.05;
constexpr double kRecallThreshold = 0.80;

constexpr uint64_t kBenchSeed = 307;
constexpr int kBenchScenes = 200;
const char* kBenchDir = "/tmp/svp_accept_bench";
const char* kBenchOutDir = "/tmp/svp_accept_bench_out";
const char* kTrainDir = "/tmp/svp_accept_train";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Acceptance {
    int failures = 0;
    std::set<int> only;

    bool enabled(int id) const { return only.empty() || only.count(id) > 0; }

    void report(int id, const char* name, bool pass, const std::string& detail) {
        std::printf("[%s] %2d %s — %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
};

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

double unit_angle(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0));
}

Segment random_segment(Rng& rng, double min_len = 0.05) {
    while (true) {
        const Segment s{Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                        Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))};
        if (s.length() >= min_len) return s;
    }
}

Segment segment_toward(const Vec2& mid, const Vec2& target, double half) {
    const Vec2 d = (target - mid).normalized();
    return Segment{mid - half * d, mid + half * d};
}

// --- 1: geometry round trips -------------------------------------------------

void c1_geometry(Acceptance& acc) {
    const auto t0 = Clock::now();
    Rng rng(11);
    double max_dev = 0.0;
    for (int i = 0; i < 10000; ++i) {
        Vec3 v = rng.unit_vector();
        if (v.z() < 0) v = -v;
        if (v.z() < 1e-6) continue;
        const Vec3 back = sphere_to_point(point_to_sphere(v));
        max_dev = std::max(max_dev, (back - v).cwiseAbs().maxCoeff());
    }

    bool bins_ok = true;
    for (int n : {4, 20, 32}) {
        for (int b = 0; b < n * n; ++b)
            bins_ok = bins_ok && vp_to_bin(bin_center(b, n), n) == b;
    }
    for (int i = 0; i < 10000; ++i) {
        const SphereCoord c{rng.uniform(-kHalfPi, kHalfPi), rng.uniform(-kHalfPi, kHalfPi)};
        const int b = vp_to_bin(c, 20);
        bins_ok = bins_ok && vp_to_bin(bin_center(b, 20), 20) == b;
    }
    const double dt = seconds_since(t0);
    acc.report(1, "geometry round trips", max_dev < 1e-9 && bins_ok && dt < 1.0,
               fmt("max sphere/point deviation %.2e, bin indices %s, %.2f s", max_dev,
                   bins_ok ? "exact" : "BROKEN", dt));
}

// --- 2: Eq. 2 incidence --------------------------------------------------------

void c2_incidence(Acceptance& acc) {
    Rng rng(13);
    double max_dot = 0.0;
    int done = 0;
    while (done < 1000) {
        const HomLine l = segment_to_line(random_segment(rng));
        if (std::abs(l.l2()) < 1e-3) continue;
        const double alpha = rng.uniform(-kHalfPi, kHalfPi);
        double beta;
        try {
            beta = line_elevation(l, alpha);
        } catch (const NearPolarLine&) {
            continue;
        }
        const Vec3 v = sphere_to_point(SphereCoord{alpha, beta});
        max_dot = std::max(max_dot, std::abs(l.coeffs.dot(v)));
        ++done;
    }
    acc.report(2, "great-circle incidence", max_dot < 1e-9, fmt("max |l.v| %.2e", max_dot));
}

// --- 3: M-step optimality ------------------------------------------------------

void c3_mstep(Acceptance& acc) {
    Rng rng(17);
    bool optimal = true;
    double worst_gap = 0.0;
    for (int set = 0; set < 100; ++set) {
        const int n = rng.uniform_int(5, 30);
        std::vector<HomLine> lines;
        Eigen::MatrixXd w(n, 1);
        for (int i = 0; i < n; ++i) {
            lines.push_back(segment_to_line(random_segment(rng)));
            w(i, 0) = rng.uniform(0.05, 1.0);
        }
        EmState state;
        state.candidates = {VpCandidate{Vec3::UnitZ(), 0, 0.0}};
        state.affinities = w;
        state.line_weights = Eigen::VectorXd::Ones(n);
        m_step(state, lines);
        const Vec3 v = state.candidates[0].v;

        const auto objective = [&](const Vec3& u) {
            double o = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = lines[i].coeffs.dot(u);
                o += w(i, 0) * d * d;
            }
            return o;
        };
        const double at_solution = objective(v);
        for (int p = 0; p < 10000; ++p) {
            const double probe = objective(rng.unit_vector());
            worst_gap = std::min(worst_gap, probe - at_solution);
            if (probe < at_solution - 1e-12) optimal = false;
        }
    }

    double worst_pencil = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Vec2 target(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
        const Vec3 truth = Vec3(target.x(), target.y(), 1.0).normalized();
        const int n = 20;
        std::vector<HomLine> lines;
        for (int i = 0; i < n; ++i) {
            Vec2 mid(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
            while ((mid - target).norm() < 0.1)
                mid = Vec2(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
            lines.push_back(segment_to_line(segment_toward(mid, target, 0.05)));
        }
        EmState state;
        state.candidates = {VpCandidate{Vec3::UnitZ(), 0, 0.0}};
        state.affinities = Eigen::MatrixXd::Ones(n, 1);
        state.line_weights = Eigen::VectorXd::Ones(n);
        m_step(state, lines);
        worst_pencil = std::max(worst_pencil, unit_angle(state.candidates[0].v, truth));
    }
    acc.report(3, "M-step optimality", optimal && worst_pencil < 1e-8,
               fmt("worst probe gap %.1e, worst pencil recovery %.2e rad", worst_gap,
                   worst_pencil));
}

// --- 4: EM baseline reduction ---------------------------------------------------

void c4_plain_em(Acceptance& acc) {
    EmConfig cfg;
    cfg.lambda_mix = 0.0;
    cfg.eps_weight = 1.0;
    cfg.f_s = 0;
    cfg.uniform_prior = true;

    SynthConfig scfg;
    scfg.noise_scale_range = {0.0, 0.003};

    int compared = 0;
    double max_dev = 0.0;
    bool structure_ok = true;
    for (uint64_t s = 0; s < 100 && compared < 20; ++s) {
        Rng rng(stream_seed(6200, s));
        SynthScene scene;
        try {
            scene = sample_scene(scfg, 1 + static_cast<int>(s % 6), rng);
        } catch (const DegenerateScene&) {
            continue;
        }
        ++compared;
        const BinGrid grid = make_target(scene, 20);
        const EmResult ours = run_em(scene.segments, grid, cfg);
        const svp_test::RefResult ref = svp_test::reference_plain_em(scene.segments, grid, cfg);
        if (ours.candidates.size() != ref.v.size() || ours.labels != ref.labels ||
            ours.iterations != ref.iterations) {
            structure_ok = false;
            continue;
        }
        for (size_t c = 0; c < ref.v.size(); ++c)
            max_dev = std::max(max_dev,
                               (ours.candidates[c].v - ref.v[c]).cwiseAbs().maxCoeff());
    }
    acc.report(4, "EM reduces to the plain reference",
               compared == 20 && structure_ok && max_dev < 1e-9,
               fmt("%d scenes, max candidate deviation %.2e", compared, max_dev));
}

// --- 5: end-to-end synthetic recovery -------------------------------------------

struct RecoveryStats {
    int total_vps = 0;
    int recovered = 0;
};

RecoveryStats recovery_run(uint64_t base_seed, int scenes, double noise, bool outliers,
                           double tolerance_rad) {
    RecoveryStats stats;
    int done = 0;
    for (uint64_t s = 0; done < scenes; ++s) {
        const int k_d = 1 + static_cast<int>(s % 3);
        SynthConfig cfg;
        cfg.clusters_per_direction = {5, 8};
        cfg.segments_per_cluster = {3, 5};
        cfg.focal_range = {1.2, 2.5};
        cfg.noise_scale_range = {noise, noise};
        cfg.outlier_count = {0, 0};
        if (outliers) {
            // Re-sample the same seed without outliers first, so the outlier
            // count can be fixed at 20% of this scene's own core segments.
            Rng probe_rng(stream_seed(base_seed, s));
            SynthScene probe;
            try {
                probe = sample_scene(cfg, k_d, probe_rng);
            } catch (const DegenerateScene&) {
                continue;
            }
            const int fifth = static_cast<int>(probe.segments.size()) / 5;
            cfg.outlier_count = {fifth, fifth};
        }
        Rng rng(stream_seed(base_seed, s));
        SynthScene scene;
        try {
            scene = sample_scene(cfg, k_d, rng);
        } catch (const DegenerateScene&) {
            continue;
        }
        ++done;

        std::vector<HomLine> lines;
        for (const Segment& seg : scene.segments) lines.push_back(segment_to_line(seg));
        const BinGrid grid = accumulator_predict(lines, 20);
        const EmResult em = run_em(scene.segments, grid, EmConfig{});

        for (const SphereCoord& true_vp : scene.true_vps) {
            const Vec3 truth = sphere_to_point(true_vp);
            double best = kHalfPi;
            for (const VpCandidate& c : em.candidates)
                best = std::min(best, unit_angle(c.v, truth));
            ++stats.total_vps;
            if (best < tolerance_rad) ++stats.recovered;
        }
    }
    return stats;
}

void c5_end_to_end(Acceptance& acc) {
    const auto t0 = Clock::now();
    const double deg = kPi / 180.0;
    const RecoveryStats clean = recovery_run(7100, 200, 0.0, false, 1.0 * deg);
    const RecoveryStats noisy = recovery_run(7200, 200, 0.005, true, 2.0 * deg);
    const double dt = seconds_since(t0);
    const double clean_rate = static_cast<double>(clean.recovered) / clean.total_vps;
    const double noisy_rate = static_cast<double>(noisy.recovered) / noisy.total_vps;
    acc.report(5, "end-to-end synthetic recovery",
               clean_rate >= 0.95 && noisy_rate >= 0.85 && dt < 60.0,
               fmt("clean %.1f%% @1deg (%d/%d), noisy %.1f%% @2deg (%d/%d), %.1f s",
                   100.0 * clean_rate, clean.recovered, clean.total_vps, 100.0 * noisy_rate,
                   noisy.recovered, noisy.total_vps, dt));
}

// --- 6: synthetic horizon benchmark ---------------------------------------------

std::optional<BenchSummary> g_baseline_summary;

const BenchSummary& baseline_bench() {
    if (!g_baseline_summary) {
        if (!fs::exists(fs::path(kBenchDir) / "scene_0000.segments.json"))
            make_manhattan_benchmark(kBenchDir, kBenchScenes, kBenchSeed, 640);
        BenchConfig cfg;
        cfg.threads = 1;
        g_baseline_summary =
            run_bench(kBenchDir, CoarsePredictor::baseline(20), cfg, kBenchOutDir);
    }
    return *g_baseline_summary;
}

void c6_benchmark(Acceptance& acc) {
    const auto t0 = Clock::now();
    const BenchSummary& s = baseline_bench();
    const double dt = seconds_since(t0);
    acc.report(6, "synthetic horizon benchmark",
               s.n_images == kBenchScenes && s.auc >= 0.90 &&
                   s.orthogonal_accuracy_at_5deg >= 0.95 && dt < 300.0,
               fmt("AUC %.4f, orthogonal accuracy %.4f, %d failures, %.1f s", s.auc,
                   s.orthogonal_accuracy_at_5deg, s.n_failures, dt));
}

// --- 7: gradient check ----------------------------------------------------------

void c7_gradient(Acceptance& acc) {
    const auto t0 = Clock::now();
    const double err = gradient_check(NetSpec::tiny(), 71, 100);
    const double dt = seconds_since(t0);
    acc.report(7, "gradient check", err < 1e-3 && dt < 30.0,
               fmt("max relative error %.2e, %.1f s", err, dt));
}

// --- 8: desk-scale training -----------------------------------------------------

void c8_training(Acceptance& acc) {
    const auto t0 = Clock::now();

    SynthConfig gen;
    gen.examples_per_kd = 6000;  // 36,000 scenes over k_d = 1..6
    gen.seed = 401;
    const fs::path manifest = fs::path(kTrainDir) / "manifest.json";
    if (!fs::exists(manifest)) make_dataset(gen, kTrainDir);
    const std::vector<std::string> files = manifest_scene_files(manifest.string());
    std::fprintf(stderr, "acceptance: dataset of %zu scenes ready (%.0f s)\n", files.size(),
                 seconds_since(t0));

    const NetSpec spec = NetSpec::desk_scale();
    const Dataset data = build_dataset(files, spec.input_resolution, spec.grid_n);
    std::fprintf(stderr, "acceptance: sphere images rendered (%.0f s)\n", seconds_since(t0));

    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.9;
    cfg.batch_size = 64;
    cfg.epochs = kTrainEpochs;
    cfg.seed = 5;
    cfg.validation_fraction = 1000.0 / 36000.0;

    TrainReport report;
    const NetParams params = train(spec, data, cfg, &report, &std::cerr);

    // the same deterministic split train() uses: tail of the shuffled order
    const int n = static_cast<int>(data.images.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(stream_seed(cfg.seed, 99));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    const int n_val = std::max(1, static_cast<int>(std::lround(n * cfg.validation_fraction)));
    const std::vector<int> val_idx(order.end() - n_val, order.end());

    const double recall = topk_recall(params, data, val_idx, EmConfig{}.k_init,
                                      kDefaultThetaAct);

    const std::string model_path = "/tmp/svp_accept_model.svpm";
    save_model(params, model_path);
    BenchConfig bcfg;
    bcfg.threads = 1;
    baseline_bench();  // ensure the benchmark dataset and baseline AUC exist
    const BenchSummary trained = run_bench(kBenchDir, CoarsePredictor::from_model(model_path),
                                           bcfg, "/tmp/svp_accept_bench_trained");

    const double dt = seconds_since(t0);
    const bool pass = report.final_val_bce < kValBceThreshold &&
                      recall >= kRecallThreshold &&
                      trained.auc >= g_baseline_summary->auc && dt < 14400.0;
    acc.report(8, "desk-scale training", pass,
               fmt("val BCE %.4f (< %.2f), top-%d recall %.1f%% (>= %.0f%%), AUC %.4f vs "
                   "baseline %.4f, %d held out, %.0f s",
                   report.final_val_bce, kValBceThreshold, EmConfig{}.k_init, 100.0 * recall,
                   100.0 * kRecallThreshold, trained.auc, g_baseline_summary->auc, n_val, dt));
}

// --- 9: calibration oracle -------------------------------------------------------

void c9_calibration(Acceptance& acc) {
    Rng rng(19);
    double worst_f = 0.0, worst_pp = 0.0, worst_pair = 0.0;
    int done = 0;
    while (done < 100) {
        const Mat3 r = rng.rotation();
        if (std::abs(r(2, 0)) < 0.1 || std::abs(r(2, 1)) < 0.1 || std::abs(r(2, 2)) < 0.1)
            continue;
        const double f = rng.uniform(0.5, 3.0);
        const Vec2 pp(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
        const auto vp = [&](int col) {
            const Vec3 d = r.col(col);
            return Vec2(f * d.x() / d.z() + pp.x(), f * d.y() / d.z() + pp.y());
        };
        try {
            const Intrinsics k = intrinsics_from_triplet(vp(0), vp(1), vp(2));
            worst_f = std::max(worst_f, std::abs(k.f - f) / f);
            worst_pp = std::max(worst_pp, std::max(std::abs(k.u0 - pp.x()),
                                                   std::abs(k.v0 - pp.y())));
            worst_pair = std::max(worst_pair, std::abs(focal_from_pair(vp(0), vp(1), pp) - f) / f);
        } catch (const Error&) {
            continue;
        }
        ++done;
    }
    acc.report(9, "calibration inverts synthetic projections",
               worst_f < 1e-6 && worst_pp < 1e-6 && worst_pair < 1e-6,
               fmt("worst relative focal error %.1e (triplet), %.1e (pair), principal %.1e",
                   worst_f, worst_pair, worst_pp));
}

// --- 10: metric correctness -------------------------------------------------------

double cdf_area(std::vector<double> errors, double cap) {
    std::sort(errors.begin(), errors.end());
    const double n = static_cast<double>(errors.size());
    double area = 0.0, x = 0.0;
    size_t i = 0;
    while (x < cap) {
        while (i < errors.size() && errors[i] <= x) ++i;
        const double next = i < errors.size() ? std::min(errors[i], cap) : cap;
        area += static_cast<double>(i) / n * (next - x);
        x = next;
        if (i >= errors.size()) break;
    }
    if (x < cap) area += cap - x;
    return area / cap;
}

void c10_metrics(Acceptance& acc) {
    const ImageFrame frame{200, 100};
    const HomLine truth = make_line(Vec3(0, 1, -50));
    const HomLine offset = make_line(Vec3(0, 1, -60));
    const HomLine crossing = make_line(Vec3(0.15, 1, -70));

    bool ok = horizon_error(truth, truth, frame) == 0.0;
    ok = ok && std::abs(horizon_error(offset, truth, frame) - 0.1) < 1e-12;
    ok = ok && std::abs(horizon_error(crossing, truth, frame) - 0.2) < 1e-12;

    ok = ok && auc(std::vector<double>(10, 0.0)) == 1.0;
    ok = ok && auc(std::vector<double>(10, 0.3)) == 0.0;
    std::vector<double> half(10, 0.0);
    for (int i = 0; i < 5; ++i) half[i] = 0.25;
    ok = ok && auc(half) == 0.5;

    Rng rng(23);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> errors;
        const int n = rng.uniform_int(1, 50);
        for (int i = 0; i < n; ++i) errors.push_back(rng.uniform(0.0, 0.5));
        worst = std::max(worst, std::abs(auc(errors, 0.25) - cdf_area(errors, 0.25)));
    }
    acc.report(10, "metric correctness", ok && worst < 1e-12,
               fmt("hand examples %s, max CDF-integration deviation %.1e",
                   ok ? "exact" : "WRONG", worst));
}

}  // namespace

int main(int argc, char** argv) {
    Acceptance acc;
    for (int i = 1; i < argc; ++i) acc.only.insert(std::atoi(argv[i]));

    struct Entry {
        int id;
        const char* name;
        void (*run)(Acceptance&);
    };
    const Entry entries[] = {
        {1, "geometry round trips", c1_geometry},
        {2, "great-circle incidence", c2_incidence},
        {3, "M-step optimality", c3_mstep},
        {4, "EM reduces to the plain reference", c4_plain_em},
        {5, "end-to-end synthetic recovery", c5_end_to_end},
        {6, "synthetic horizon benchmark", c6_benchmark},
        {7, "gradient check", c7_gradient},
        {8, "desk-scale training", c8_training},
        {9, "calibration inverts synthetic projections", c9_calibration},
        {10, "metric correctness", c10_metrics},
    };
    for (const Entry& e : entries) {
        if (!acc.enabled(e.id)) continue;
        try {
            e.run(acc);
        } catch (const std::exception& ex) {
            acc.report(e.id, e.name, false, std::string("exception: ") + ex.what());
        }
    }
    if (acc.enabled(11))
        std::printf("[SKIP] 11 paper-scale benchmark — no external ground truth supplied, "
                    "no threshold attached\n");

    if (acc.failures == 0) std::printf("acceptance: all criteria passed\n");
    return acc.failures == 0 ? 0 : 1;
}
