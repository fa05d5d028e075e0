#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "svp/coarse_net.hpp"
#include "svp/em_refine.hpp"
#include "svp/horizon.hpp"
#include "svp/io.hpp"

namespace svp {

// Coarse VP-likelihood predictor: either the non-learned accumulator or a
// trained net over the rendered sphere image.
class CoarsePredictor {
  public:
    static CoarsePredictor baseline(int grid_n, double sigma_acc = kDefaultSigmaAcc);
    static CoarsePredictor from_model(const std::string& path);
    static CoarsePredictor from_params(NetParams params);

    BinGrid predict(std::span<const HomLine> lines) const;
    int grid_n() const;
    bool is_baseline() const { return !params_.has_value(); }

  private:
    CoarsePredictor() = default;
    std::optional<NetParams> params_;
    int grid_n_ = 20;
    double sigma_acc_ = kDefaultSigmaAcc;
};

struct DetectOptions {
    EmConfig em;
    HorizonConfig horizon;
};

struct StageTimings {
    double coarse_ms = 0.0;
    double em_ms = 0.0;
    double horizon_ms = 0.0;
};

struct DetectionResult {
    std::vector<VpCandidate> vps;           // normalised coordinates, triplet first
    std::vector<int> labels;                // per input segment; -1 for degenerate/outlier-less
    std::array<int, 3> triplet{-1, -1, -1}; // indices into vps, zenith first
    bool horizon_found = false;             // false: fallback y = centre line
    HorizonLine horizon;                    // normalised coordinates
    std::array<Vec2, 2> horizon_px{};       // endpoints at x = 0 and x = width
    int em_iterations = 0;
    StageTimings timings;  // diagnostic only, never serialised
};

DetectionResult detect(const SegmentsFile& input, const CoarsePredictor& predictor,
                       const DetectOptions& opts);

// Deterministic JSON (timings excluded).
std::string result_to_json(const DetectionResult& r, const ImageFrame& frame);

// SVG overlay: triplet segments red/green/blue, other VPs yellow, outliers
// black, horizon magenta, ground-truth horizon cyan.
void emit_overlay(const SegmentsFile& input, const DetectionResult& r,
                  const GroundTruth* gt, const std::string& path);

}  // namespace svp
