#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "svp/geometry.hpp"

namespace svp {

// Pixel-space line segments of one image:
// {"width": w, "height": h, "segments": [[x1,y1,x2,y2], ...]}
struct SegmentsFile {
    ImageFrame frame;
    std::vector<Segment> segments;
};

SegmentsFile load_segments(const std::string& path);
void save_segments(const SegmentsFile& s, const std::string& path);

// Pixel-space ground truth of one image:
// {"width": w, "height": h, "horizon": [[x,y],[x,y]], "vps": [[x,y], ...]}
struct GroundTruth {
    ImageFrame frame;
    std::array<Vec2, 2> horizon{};
    std::vector<Vec2> vps;
};

GroundTruth load_ground_truth(const std::string& path);
void save_ground_truth(const GroundTruth& g, const std::string& path);

// VP list for calibration: {"vps": [[x,y], ...], "principal": [x,y]}
struct VpsFile {
    std::vector<Vec2> vps;
    Vec2 principal = Vec2::Zero();
};

VpsFile load_vps(const std::string& path);

}  // namespace svp
