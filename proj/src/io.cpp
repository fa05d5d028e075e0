#include "svp/io.hpp"

#include <fstream>

#include <json.hpp>

namespace svp {

namespace {

using nlohmann::json;

json parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw IoError("bad JSON in " + path + ": " + e.what());
    }
}

void write_file(const json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

Vec2 point_from(const json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }

ImageFrame frame_from(const json& j) {
    ImageFrame frame{j.at("width").get<int>(), j.at("height").get<int>()};
    if (!frame.valid()) throw IoError("non-positive image dimensions");
    return frame;
}

}  // namespace

SegmentsFile load_segments(const std::string& path) {
    const json j = parse_file(path);
    SegmentsFile out;
    try {
        out.frame = frame_from(j);
        for (const auto& s : j.at("segments"))
            out.segments.push_back(Segment{Vec2(s.at(0).get<double>(), s.at(1).get<double>()),
                                           Vec2(s.at(2).get<double>(), s.at(3).get<double>())});
    } catch (const json::exception& e) {
        throw IoError("bad segments file " + path + ": " + e.what());
    }
    return out;
}

void save_segments(const SegmentsFile& s, const std::string& path) {
    json segs = json::array();
    for (const Segment& seg : s.segments)
        segs.push_back({seg.a.x(), seg.a.y(), seg.b.x(), seg.b.y()});
    write_file({{"width", s.frame.width}, {"height", s.frame.height}, {"segments", segs}}, path);
}

GroundTruth load_ground_truth(const std::string& path) {
    const json j = parse_file(path);
    GroundTruth gt;
    try {
        gt.frame = frame_from(j);
        const auto& h = j.at("horizon");
        gt.horizon = {point_from(h.at(0)), point_from(h.at(1))};
        if ((gt.horizon[0] - gt.horizon[1]).norm() < 1e-12)
            throw IoError("ground-truth horizon points coincide in " + path);
        if (j.contains("vps"))
            for (const auto& v : j.at("vps")) gt.vps.push_back(point_from(v));
    } catch (const json::exception& e) {
        throw IoError("bad ground-truth file " + path + ": " + e.what());
    }
    return gt;
}

void save_ground_truth(const GroundTruth& g, const std::string& path) {
    json j{{"width", g.frame.width},
           {"height", g.frame.height},
           {"horizon",
            {{g.horizon[0].x(), g.horizon[0].y()}, {g.horizon[1].x(), g.horizon[1].y()}}}};
    if (!g.vps.empty()) {
        json vps = json::array();
        for (const Vec2& v : g.vps) vps.push_back({v.x(), v.y()});
        j["vps"] = vps;
    }
    write_file(j, path);
}

VpsFile load_vps(const std::string& path) {
    const json j = parse_file(path);
    VpsFile out;
    try {
        for (const auto& v : j.at("vps")) out.vps.push_back(point_from(v));
        if (j.contains("principal")) out.principal = point_from(j.at("principal"));
    } catch (const json::exception& e) {
        throw IoError("bad vps file " + path + ": " + e.what());
    }
    return out;
}

}  // namespace svp
