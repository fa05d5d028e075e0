#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "svp/bench.hpp"
#include "svp/coarse_net.hpp"
#include "svp/pipeline.hpp"
#include "svp/synthgen.hpp"

namespace {

using nlohmann::json;

svp::SynthConfig synth_config_from_file(const std::string& path) {
    svp::SynthConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream f(path);
    if (!f) throw svp::IoError("cannot open " + path);
    json j;
    try {
        f >> j;
        auto int_range = [&](const char* key, svp::IntRange& r) {
            if (j.contains(key)) r = {j[key].at(0).get<int>(), j[key].at(1).get<int>()};
        };
        auto real_range = [&](const char* key, svp::RealRange& r) {
            if (j.contains(key)) r = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
        };
        int_range("k_d_range", cfg.k_d_range);
        int_range("clusters_per_direction", cfg.clusters_per_direction);
        int_range("segments_per_cluster", cfg.segments_per_cluster);
        int_range("outlier_count", cfg.outlier_count);
        real_range("noise_scale_range", cfg.noise_scale_range);
        real_range("focal_range", cfg.focal_range);
        if (j.contains("noise_kind"))
            cfg.noise_kind = j["noise_kind"].get<std::string>() == "gaussian"
                                 ? svp::NoiseKind::kGaussian
                                 : svp::NoiseKind::kUniform;
        if (j.contains("examples_per_kd")) cfg.examples_per_kd = j["examples_per_kd"].get<int>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    } catch (const json::exception& e) {
        throw svp::IoError("bad generator config " + path + ": " + e.what());
    }
    return cfg;
}

svp::CoarsePredictor make_predictor(const std::string& model_path, bool baseline, int grid_n) {
    if (baseline) return svp::CoarsePredictor::baseline(grid_n);
    return svp::CoarsePredictor::from_model(model_path);
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, uint64_t seed,
            bool seed_set, int manhattan, int frame_side) {
    if (manhattan > 0) {
        svp::make_manhattan_benchmark(out_dir, manhattan, seed_set ? seed : 1, frame_side);
        std::cout << "wrote " << manhattan << " benchmark scenes to " << out_dir << "\n";
        return 0;
    }
    svp::SynthConfig cfg = synth_config_from_file(config_path);
    if (seed_set) cfg.seed = seed;
    const std::string manifest = svp::make_dataset(cfg, out_dir);
    std::cout << "wrote " << manifest << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& spec_path,
              const std::string& out_path, const svp::TrainConfig& cfg) {
    svp::NetSpec spec;
    if (spec_path.empty()) {
        spec = svp::NetSpec::desk_scale();
    } else {
        std::ifstream f(spec_path);
        if (!f) throw svp::IoError("cannot open " + spec_path);
        std::stringstream ss;
        ss << f.rdbuf();
        spec = svp::NetSpec::from_json(ss.str());
    }

    const std::string manifest = data_dir + "/manifest.json";
    std::cerr << "loading scenes from " << manifest << "...\n";
    const std::vector<std::string> files = svp::manifest_scene_files(manifest);
    const svp::Dataset data = svp::build_dataset(files, spec.input_resolution, spec.grid_n);
    std::cerr << "rendered " << data.images.size() << " examples\n";

    svp::TrainReport report;
    const svp::NetParams params = svp::train(spec, data, cfg, &report, &std::cerr);
    svp::save_model(params, out_path);
    std::cout << "final validation bce " << report.final_val_bce << "\n";
    std::cout << "saved " << out_path << "\n";
    return 0;
}

int cmd_detect(const std::string& segments_path, const std::string& model_path, bool baseline,
               const std::string& out_path, const std::string& overlay_path,
               const std::string& gt_path, const svp::DetectOptions& opts, int grid_n) {
    const svp::SegmentsFile input = svp::load_segments(segments_path);
    const svp::CoarsePredictor predictor = make_predictor(model_path, baseline, grid_n);
    const svp::DetectionResult result = svp::detect(input, predictor, opts);
    std::fprintf(stderr, "timings: coarse %.1f ms, em %.1f ms, horizon %.1f ms\n",
                 result.timings.coarse_ms, result.timings.em_ms, result.timings.horizon_ms);

    const std::string payload = svp::result_to_json(result, input.frame);
    if (out_path.empty() || out_path == "-") {
        std::cout << payload << "\n";
    } else {
        std::ofstream f(out_path);
        if (!f) throw svp::IoError("cannot open " + out_path);
        f << payload << "\n";
    }
    if (!overlay_path.empty()) {
        svp::GroundTruth gt;
        const svp::GroundTruth* gt_ptr = nullptr;
        if (!gt_path.empty()) {
            gt = svp::load_ground_truth(gt_path);
            gt_ptr = &gt;
        }
        svp::emit_overlay(input, result, gt_ptr, overlay_path);
    }
    return 0;
}

int cmd_bench(const std::string& dataset_dir, const std::string& model_path, bool baseline,
              const std::string& out_dir, const svp::BenchConfig& cfg, int grid_n) {
    const svp::CoarsePredictor predictor = make_predictor(model_path, baseline, grid_n);
    const svp::BenchSummary summary = svp::run_bench(dataset_dir, predictor, cfg, out_dir);
    std::cout << "images " << summary.n_images << ", failures " << summary.n_failures << ", auc "
              << summary.auc << ", mean " << summary.mean_err << ", median "
              << summary.median_err;
    if (summary.has_orthogonal)
        std::cout << ", orth@5deg " << summary.orthogonal_accuracy_at_5deg;
    std::cout << "\n";
    return summary.n_failures > 0 ? 2 : 0;
}

int cmd_calib(const std::string& vps_path, bool pair, const std::string& rectify) {
    const svp::VpsFile file = svp::load_vps(vps_path);
    json out;
    svp::Intrinsics k;
    if (pair) {
        if (file.vps.size() < 2) throw svp::IoError("calib --pair needs 2 vps");
        k.f = svp::focal_from_pair(file.vps[0], file.vps[1], file.principal);
        k.u0 = file.principal.x();
        k.v0 = file.principal.y();
        out["f"] = k.f;
    } else {
        if (file.vps.size() < 3) throw svp::IoError("calib --triplet needs 3 vps");
        k = svp::intrinsics_from_triplet(file.vps[0], file.vps[1], file.vps[2]);
        out["f"] = k.f;
        out["u0"] = k.u0;
        out["v0"] = k.v0;
    }
    if (!rectify.empty()) {
        const svp::Axis axis = rectify == "x"   ? svp::Axis::kX
                               : rectify == "y" ? svp::Axis::kY
                                                : svp::Axis::kZ;
        const svp::Vec3 v(file.vps[0].x(), file.vps[0].y(), 1.0);
        const svp::Mat3 h = svp::rectify_homography(k, v, axis);
        json rows = json::array();
        for (int r = 0; r < 3; ++r) rows.push_back({h(r, 0), h(r, 1), h(r, 2)});
        out["homography"] = rows;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vanishing point detection on the Gaussian sphere"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate synthetic scene datasets");
    std::string gen_config, gen_out;
    uint64_t gen_seed = 1;
    int gen_manhattan = 0, gen_frame = 640;
    gen->add_option("--config", gen_config, "Generator config JSON");
    gen->add_option("--out", gen_out, "Output directory")->required();
    auto* seed_opt = gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--manhattan-bench", gen_manhattan,
                    "Emit this many benchmark segment/gt pairs instead of raw scenes");
    gen->add_option("--frame-side", gen_frame, "Pixel side of benchmark frames");

    // train
    auto* train = app.add_subcommand("train", "Train the coarse predictor");
    std::string train_data, train_spec, train_out = "model.svpm";
    svp::TrainConfig tcfg;
    train->add_option("--data", train_data, "Dataset directory (with manifest.json)")->required();
    train->add_option("--spec", train_spec, "Net spec JSON (default: built-in)");
    train->add_option("--out", train_out, "Output model path");
    train->add_option("--lr", tcfg.learning_rate, "Learning rate");
    train->add_option("--momentum", tcfg.momentum, "SGD momentum");
    train->add_option("--batch", tcfg.batch_size, "Batch size");
    train->add_option("--epochs", tcfg.epochs, "Epochs");
    train->add_option("--seed", tcfg.seed, "Init/shuffle seed");
    train->add_option("--val-fraction", tcfg.validation_fraction, "Validation fraction");

    // detect
    auto* detect = app.add_subcommand("detect", "Detect VPs and the horizon in one image");
    std::string det_segments, det_model, det_out, det_overlay, det_gt;
    bool det_baseline = false;
    svp::DetectOptions dopts;
    int det_grid = 20;
    detect->add_option("--segments", det_segments, "Segments JSON")->required();
    detect->add_option("--model", det_model, "Trained model file");
    detect->add_flag("--baseline", det_baseline, "Use the accumulator instead of a net");
    detect->add_option("--out", det_out, "Result JSON path ('-' for stdout)");
    detect->add_option("--overlay", det_overlay, "SVG overlay path");
    detect->add_option("--gt", det_gt, "Ground-truth JSON for the overlay");
    detect->add_option("--grid-n", det_grid, "Accumulator grid size");
    detect->add_option("--k-init", dopts.em.k_init, "Initial EM candidates");
    detect->add_option("--max-iters", dopts.em.max_iters, "EM iteration cap");

    // bench
    auto* bench = app.add_subcommand("bench", "Run the horizon benchmark on a dataset");
    std::string b_dataset, b_model, b_out;
    bool b_baseline = false;
    svp::BenchConfig bcfg;
    int b_grid = 20;
    bench->add_option("--dataset", b_dataset, "Dataset directory")->required();
    bench->add_option("--model", b_model, "Trained model file");
    bench->add_flag("--baseline", b_baseline, "Use the accumulator instead of a net");
    bench->add_option("--out", b_out, "Report directory")->required();
    bench->add_option("--max-err", bcfg.max_err, "Error cap for the AUC");
    bench->add_option("--threads", bcfg.threads, "Worker threads (0 = auto)");
    bench->add_option("--grid-n", b_grid, "Accumulator grid size");

    // calib
    auto* calib = app.add_subcommand("calib", "Camera intrinsics from orthogonal VPs");
    std::string c_vps, c_rectify;
    bool c_pair = false, c_triplet = false;
    calib->add_option("--vps", c_vps, "VP list JSON")->required();
    calib->add_flag("--pair", c_pair, "Two VPs + known principal point");
    calib->add_flag("--triplet", c_triplet, "Three orthogonal VPs (default)");
    calib->add_option("--rectify", c_rectify, "Also emit H aligning vps[0] with axis x|y|z")
        ->check(CLI::IsMember({"x", "y", "z"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_config, gen_out, gen_seed, seed_opt->count() > 0, gen_manhattan,
                           gen_frame);
        if (train->parsed()) return cmd_train(train_data, train_spec, train_out, tcfg);
        if (detect->parsed()) {
            if (!det_baseline && det_model.empty())
                throw svp::IoError("detect needs --model or --baseline");
            return cmd_detect(det_segments, det_model, det_baseline, det_out, det_overlay, det_gt,
                              dopts, det_grid);
        }
        if (bench->parsed()) {
            if (!b_baseline && b_model.empty())
                throw svp::IoError("bench needs --model or --baseline");
            return cmd_bench(b_dataset, b_model, b_baseline, b_out, bcfg, b_grid);
        }
        if (calib->parsed()) {
            if (c_pair && c_triplet) throw svp::IoError("choose one of --pair/--triplet");
            return cmd_calib(c_vps, c_pair, c_rectify);
        }
    } catch (const svp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
