#pragma once

#include <string>
#include <vector>

#include "svp/pipeline.hpp"

namespace svp {

struct BenchConfig {
    DetectOptions detect;
    double max_err = 0.25;
    int threads = 0;  // 0: hardware concurrency, capped by SPHERE_VP_THREADS
};

struct BenchImageRow {
    std::string name;
    double error = 0.0;
    bool failed = false;
};

struct BenchSummary {
    int n_images = 0;
    int n_failures = 0;
    double auc = 0.0;
    double mean_err = 0.0;
    double median_err = 0.0;
    bool has_orthogonal = false;
    double orthogonal_accuracy_at_5deg = 0.0;
    double wall_time_s = 0.0;
    std::vector<BenchImageRow> rows;
};

// Runs detect on every <stem>.segments.json / <stem>.gt.json pair (sorted by
// name) and writes errors.csv, cumulative.csv (101 samples), curve.svg and
// summary.json into out_dir. Per-image failures score max_err and never abort
// the run.
BenchSummary run_bench(const std::string& dataset_dir, const CoarsePredictor& predictor,
                       const BenchConfig& cfg, const std::string& out_dir);

// Thread count after applying the SPHERE_VP_THREADS cap.
int resolve_thread_count(int requested);

// Synthetic Manhattan benchmark: `count` scenes with three orthogonal
// directions, a clear zenith and a horizon inside the slope cap, written as
// segments/gt pairs on a square pixel frame.
void make_manhattan_benchmark(const std::string& out_dir, int count, uint64_t seed,
                              int frame_side = 640);

}  // namespace svp
