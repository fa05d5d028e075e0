#include "svp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace svp {

namespace {

using nlohmann::json;

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

bool lex_less(const Vec3& a, const Vec3& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
}

}  // namespace

CoarsePredictor CoarsePredictor::baseline(int grid_n, double sigma_acc) {
    CoarsePredictor p;
    p.grid_n_ = grid_n;
    p.sigma_acc_ = sigma_acc;
    return p;
}

CoarsePredictor CoarsePredictor::from_model(const std::string& path) {
    return from_params(load_model(path));
}

CoarsePredictor CoarsePredictor::from_params(NetParams params) {
    CoarsePredictor p;
    p.grid_n_ = params.spec.grid_n;
    p.params_ = std::move(params);
    return p;
}

int CoarsePredictor::grid_n() const { return grid_n_; }

BinGrid CoarsePredictor::predict(std::span<const HomLine> lines) const {
    if (!params_) return accumulator_predict(lines, grid_n_, sigma_acc_);
    const SphereImage img = render_sphere_image(lines, params_->spec.input_resolution);
    return forward(*params_, img);
}

DetectionResult detect(const SegmentsFile& input, const CoarsePredictor& predictor,
                       const DetectOptions& opts) {
    if (!input.frame.valid()) throw IoError("detect: invalid image frame");

    const Mat3 h_norm = normalize_transform(input.frame);
    std::vector<Segment> segments;          // valid, normalised
    std::vector<int> origin;                // index into input.segments
    segments.reserve(input.segments.size());
    for (size_t i = 0; i < input.segments.size(); ++i) {
        const Segment norm{apply_homography(h_norm, input.segments[i].a),
                           apply_homography(h_norm, input.segments[i].b)};
        if (norm.length() <= kDegenerateSegmentEps) continue;
        segments.push_back(norm);
        origin.push_back(static_cast<int>(i));
    }
    if (segments.size() < 2) throw TooFewSegments("detect needs at least 2 valid segments");

    std::vector<HomLine> lines;
    lines.reserve(segments.size());
    for (const Segment& s : segments) lines.push_back(segment_to_line(s));

    DetectionResult result;
    auto t0 = std::chrono::steady_clock::now();
    const BinGrid grid = predictor.predict(lines);
    result.timings.coarse_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    const EmResult em = run_em(segments, grid, opts.em);
    result.timings.em_ms = ms_since(t0);
    result.em_iterations = em.iterations;

    t0 = std::chrono::steady_clock::now();
    std::array<int, 3> triplet{-1, -1, -1};
    bool found = false;
    try {
        const TripletChoice choice = select_triplet(em.candidates, opts.horizon);
        result.horizon = fit_horizon(choice, em.candidates, opts.horizon);
        triplet = choice.indices;
        found = true;
    } catch (const NoValidTriplet&) {
    } catch (const DegenerateFit&) {
    }
    if (!found) result.horizon = HorizonLine{make_line(Vec3(0, 1, 0))};
    result.horizon_found = found;
    result.timings.horizon_ms = ms_since(t0);

    // order VPs: triplet first (zenith leading), then by support
    const int k = static_cast<int>(em.candidates.size());
    std::vector<int> order;
    order.reserve(k);
    if (found) order.assign(triplet.begin(), triplet.end());
    std::vector<int> rest;
    for (int c = 0; c < k; ++c)
        if (std::find(order.begin(), order.end(), c) == order.end()) rest.push_back(c);
    std::sort(rest.begin(), rest.end(), [&](int a, int b) {
        if (em.candidates[a].support != em.candidates[b].support)
            return em.candidates[a].support > em.candidates[b].support;
        return lex_less(em.candidates[a].v, em.candidates[b].v);
    });
    order.insert(order.end(), rest.begin(), rest.end());

    std::vector<int> new_index(k);
    for (int pos = 0; pos < k; ++pos) new_index[order[pos]] = pos;
    result.vps.reserve(k);
    for (int pos = 0; pos < k; ++pos) result.vps.push_back(em.candidates[order[pos]]);
    if (found) result.triplet = {0, 1, 2};

    result.labels.assign(input.segments.size(), -1);
    for (size_t i = 0; i < segments.size(); ++i)
        result.labels[origin[i]] = new_index[em.labels[i]];

    // pixel endpoints of the horizon at the left/right borders
    const HomLine px = denormalize_line(result.horizon.h, input.frame);
    auto y_at = [&](double x) { return -(px.l1() * x + px.l3()) / px.l2(); };
    if (std::abs(px.l2()) < 1e-12) {
        const double mid = input.frame.height / 2.0;
        result.horizon_px = {Vec2(0.0, mid), Vec2(input.frame.width, mid)};
    } else {
        result.horizon_px = {Vec2(0.0, y_at(0.0)),
                             Vec2(input.frame.width, y_at(input.frame.width))};
    }
    return result;
}

std::string result_to_json(const DetectionResult& r, const ImageFrame& frame) {
    const double s = frame.scale();
    json vps = json::array();
    for (const VpCandidate& c : r.vps) {
        const SphereCoord sc = point_to_sphere(c.v);
        json v{{"v", {c.v.x(), c.v.y(), c.v.z()}},
               {"alpha", sc.alpha},
               {"beta", sc.beta},
               {"support", c.support}};
        if (std::abs(c.v.z()) > 1e-9) {
            const double xn = c.v.x() / c.v.z(), yn = c.v.y() / c.v.z();
            v["image_point_px"] = {(xn * s + frame.width) / 2.0, (yn * s + frame.height) / 2.0};
        } else {
            v["image_point_px"] = nullptr;
        }
        vps.push_back(std::move(v));
    }

    json j;
    j["width"] = frame.width;
    j["height"] = frame.height;
    j["vps"] = std::move(vps);
    j["labels"] = r.labels;
    j["em_iterations"] = r.em_iterations;
    j["horizon"] = {
        {"found", r.horizon_found},
        {"line", {r.horizon.h.l1(), r.horizon.h.l2(), r.horizon.h.l3()}},
        {"endpoints_px",
         {{r.horizon_px[0].x(), r.horizon_px[0].y()}, {r.horizon_px[1].x(), r.horizon_px[1].y()}}}};
    if (r.triplet[0] >= 0)
        j["triplet"] = r.triplet;
    else
        j["triplet"] = nullptr;
    return j.dump(2);
}

void emit_overlay(const SegmentsFile& input, const DetectionResult& r, const GroundTruth* gt,
                  const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    const int w = input.frame.width, h = input.frame.height;
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";

    auto color_of = [&](int label) -> const char* {
        if (label < 0) return "black";
        if (label == 0) return "red";
        if (label == 1) return "green";
        if (label == 2) return "blue";
        return "yellow";
    };
    for (size_t i = 0; i < input.segments.size(); ++i) {
        const Segment& seg = input.segments[i];
        const int label = i < r.labels.size() ? r.labels[i] : -1;
        f << "<line x1=\"" << seg.a.x() << "\" y1=\"" << seg.a.y() << "\" x2=\"" << seg.b.x()
          << "\" y2=\"" << seg.b.y() << "\" stroke=\"" << color_of(label)
          << "\" stroke-width=\"2\"/>\n";
    }
    f << "<line x1=\"" << r.horizon_px[0].x() << "\" y1=\"" << r.horizon_px[0].y() << "\" x2=\""
      << r.horizon_px[1].x() << "\" y2=\"" << r.horizon_px[1].y()
      << "\" stroke=\"magenta\" stroke-width=\"3\"/>\n";
    if (gt)
        f << "<line x1=\"" << gt->horizon[0].x() << "\" y1=\"" << gt->horizon[0].y() << "\" x2=\""
          << gt->horizon[1].x() << "\" y2=\"" << gt->horizon[1].y()
          << "\" stroke=\"cyan\" stroke-width=\"3\" stroke-dasharray=\"6 4\"/>\n";
    f << "</svg>\n";
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace svp
