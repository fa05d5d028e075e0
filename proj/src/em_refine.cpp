#include "svp/em_refine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

namespace svp {

namespace {

// Front half-sphere; on the rim prefer positive x, then positive y.
Vec3 canonical_sign(Vec3 v) {
    if (v.z() < 0 || (v.z() == 0 && (v.x() < 0 || (v.x() == 0 && v.y() < 0)))) return -v;
    return v;
}

double angle_between_units(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0));
}

// Undirected direction angle of a segment, in [0, pi).
double segment_angle(const Segment& s) {
    const Vec2 d = s.b - s.a;
    double a = std::atan2(d.y(), d.x());
    if (a < 0) a += kPi;
    if (a >= kPi) a -= kPi;
    return a;
}

double point_segment_distance(const Vec2& p, const Segment& s) {
    const Vec2 d = s.b - s.a;
    const double len2 = d.squaredNorm();
    if (len2 == 0.0) return (p - s.a).norm();
    const double t = std::clamp((p - s.a).dot(d) / len2, 0.0, 1.0);
    return (p - (s.a + t * d)).norm();
}

int orientation(const Vec2& a, const Vec2& b, const Vec2& c) {
    const double v = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    return v > 0 ? 1 : v < 0 ? -1 : 0;
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
    return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
           std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

bool segments_intersect(const Segment& s, const Segment& t) {
    const int o1 = orientation(s.a, s.b, t.a);
    const int o2 = orientation(s.a, s.b, t.b);
    const int o3 = orientation(t.a, t.b, s.a);
    const int o4 = orientation(t.a, t.b, s.b);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(s.a, s.b, t.a)) return true;
    if (o2 == 0 && on_segment(s.a, s.b, t.b)) return true;
    if (o3 == 0 && on_segment(t.a, t.b, s.a)) return true;
    if (o4 == 0 && on_segment(t.a, t.b, s.b)) return true;
    return false;
}

// Smallest eigenvector of a 3x3 symmetric PSD scatter matrix. When the two
// smallest eigenvalues are negligible against the largest the matrix carries
// a single effective constraint (one great circle), and the minimiser within
// its null plane is undetermined; resolve that tie by projecting the previous
// direction onto the plane instead of letting round-off pick a point. Returns
// false (keep the previous direction) when there is no usable constraint.
bool smallest_eigenvector(const Mat3& m, const Vec3& prev, Vec3& out) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(m);
    if (eig.info() != Eigen::Success) return false;
    const Vec3 lam = eig.eigenvalues();
    if (lam(2) <= 0.0) return false;
    if (lam(1) < 1e-6 * lam(2)) {
        const Vec3 axis = eig.eigenvectors().col(2);
        const Vec3 proj = prev - prev.dot(axis) * axis;
        out = proj.norm() < 1e-9 ? Vec3(eig.eigenvectors().col(0)) : proj.normalized();
        return true;
    }
    if (lam(1) - lam(0) < 1e-12) return false;
    out = eig.eigenvectors().col(0);
    return true;
}

}  // namespace

double PriorMixture::density(const SphereCoord& at) const {
    if (weights.empty()) return 1.0 / (kPi * kPi);  // flat over the (alpha,beta) square
    const double norm = 1.0 / (2.0 * kPi * sigma * sigma);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col) {
            const double w = weights[static_cast<size_t>(row) * n + col];
            if (w == 0.0) continue;
            const SphereCoord c = bin_center(row * n + col, n);
            const double da = at.alpha - c.alpha;
            const double db = at.beta - c.beta;
            sum += w * std::exp(-(da * da + db * db) * inv2s2);
        }
    return sum * norm;
}

PriorMixture PriorMixture::uniform() { return PriorMixture{}; }

PriorMixture prior_from_grid(const BinGrid& grid, double sigma_prior) {
    double sum = 0.0;
    for (double v : grid.values) sum += v;
    if (sum <= 0.0) throw AllZeroGrid("prior grid has no mass");
    PriorMixture m;
    m.n = grid.n;
    m.sigma = sigma_prior;
    m.weights.reserve(grid.values.size());
    for (double v : grid.values) m.weights.push_back(v / sum);
    return m;
}

std::vector<VpCandidate> init_candidates(const BinGrid& grid, int k_init, double theta_act) {
    const std::vector<int> peaks = local_maxima(grid, k_init, theta_act);
    if (peaks.empty()) throw NoCandidates("no grid maxima above the activation threshold");
    std::vector<VpCandidate> candidates;
    candidates.reserve(peaks.size());
    for (int bin : peaks) {
        VpCandidate c;
        c.v = canonical_sign(sphere_to_point(bin_center(bin, grid.n)));
        c.prior_weight = grid.values[bin];
        candidates.push_back(c);
    }
    return candidates;
}

double segment_distance(const Segment& a, const Segment& b) {
    if (segments_intersect(a, b)) return 0.0;
    return std::min(std::min(point_segment_distance(a.a, b), point_segment_distance(a.b, b)),
                    std::min(point_segment_distance(b.a, a), point_segment_distance(b.b, a)));
}

double similarity(const Segment& a, const Segment& b, const EmConfig& cfg) {
    double da = std::abs(segment_angle(a) - segment_angle(b));
    if (da > kHalfPi) da = kPi - da;  // undirected angle in [0, pi/2]
    const double phi = std::clamp(cfg.k_phi * da, -kHalfPi, kHalfPi);
    const double d = segment_distance(a, b);
    return std::cos(phi) * std::exp(-d * d / (cfg.sigma_sim * cfg.sigma_sim));
}

Eigen::MatrixXd similarity_matrix(std::span<const Segment> segments, const EmConfig& cfg) {
    const int n = static_cast<int>(segments.size());
    Eigen::MatrixXd s(n, n);
    for (int i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) s(i, j) = s(j, i) = similarity(segments[i], segments[j], cfg);
    }
    return s;
}

void e_step(EmState& state, std::span<const Segment> segments, std::span<const HomLine> lines,
            const PriorMixture& prior, const Eigen::MatrixXd& sim, const EmConfig& cfg) {
    const int n = static_cast<int>(segments.size());
    const int k = static_cast<int>(state.candidates.size());

    // log prior per candidate, renormalised over candidates
    Eigen::VectorXd log_prior(k);
    double prior_sum = 0.0;
    for (int c = 0; c < k; ++c) {
        const double d = prior.density(point_to_sphere(state.candidates[c].v));
        log_prior(c) = d;
        prior_sum += d;
    }
    if (prior_sum <= 0.0) throw AllZeroGrid("prior vanishes at every candidate");
    for (int c = 0; c < k; ++c) log_prior(c) = std::log(log_prior(c) / prior_sum + 1e-300);

    // base posterior rows (max-shifted exponentials for underflow safety)
    Eigen::MatrixXd base(n, k);
    const double inv2s2 = 1.0 / (2.0 * cfg.sigma_em * cfg.sigma_em);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd score(k);
        for (int c = 0; c < k; ++c) {
            double d2 = 0.0;
            try {
                d2 = consistency_d2(segments[i], state.candidates[c].v);
            } catch (const IndeterminateConsistency&) {
                // candidate sits on the segment midpoint: maximally consistent
            }
            score(c) = -d2 * d2 * inv2s2 + log_prior(c);
        }
        const double m = score.maxCoeff();
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
            base(i, c) = std::exp(score(c) - m);
            sum += base(i, c);
        }
        if (sum <= 0.0) {
            std::fprintf(stderr, "warning: affinity row %d underflowed, assigning uniform\n", i);
            base.row(i).setConstant(1.0 / k);
        } else {
            base.row(i) /= sum;
        }
    }

    // neighbour consensus: w ~ (1-lambda) b + lambda (S+ b) / rowsum(S+)
    const Eigen::MatrixXd s_pos = sim.cwiseMax(0.0);
    const Eigen::VectorXd s_row = s_pos.rowwise().sum();  // >= 1 (unit diagonal)
    Eigen::MatrixXd w = (1.0 - cfg.lambda_mix) * base;
    if (cfg.lambda_mix != 0.0)
        w.noalias() += cfg.lambda_mix * (s_row.cwiseInverse().asDiagonal() * (s_pos * base));
    for (int i = 0; i < n; ++i) {
        const double sum = w.row(i).sum();
        if (sum <= 0.0)
            w.row(i).setConstant(1.0 / k);
        else
            w.row(i) /= sum;
    }

    // neighbour-support line weights
    Eigen::VectorXd rho(n);
    const Eigen::VectorXd r = s_row - Eigen::VectorXd::Ones(n);  // exclude self
    const double r_max = r.maxCoeff();
    if (r_max <= 0.0)
        rho.setOnes();
    else
        rho = Eigen::VectorXd::Constant(n, cfg.eps_weight) + (1.0 - cfg.eps_weight) / r_max * r;

    state.affinities = std::move(w);
    state.line_weights = std::move(rho);

    for (VpCandidate& c : state.candidates) c.support = 0;
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        state.affinities.row(i).maxCoeff(&arg);
        ++state.candidates[arg].support;
    }
    (void)lines;
}

void m_step(EmState& state, std::span<const HomLine> lines) {
    const int n = static_cast<int>(lines.size());
    for (int c = 0; c < static_cast<int>(state.candidates.size()); ++c) {
        Mat3 m = Mat3::Zero();
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double wi = state.line_weights(i) * state.affinities(i, c);
            m.noalias() += wi * lines[i].coeffs * lines[i].coeffs.transpose();
            total += wi;
        }
        Vec3 v;
        if (total > 0.0 && smallest_eigenvector(m, state.candidates[c].v, v))
            state.candidates[c].v = canonical_sign(v);
    }
}

namespace {

// 2-means on doubled segment angles via exhaustive contiguous-arc splits of
// the sorted circle; returns cluster ids aligned with the input order, or
// false if either side would be smaller than 2.
bool circular_two_means(const std::vector<double>& doubled, std::vector<int>& cluster) {
    const int n = static_cast<int>(doubled.size());
    if (n < 4) return false;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return doubled[a] < doubled[b]; });

    std::vector<Vec2> u(n);
    for (int i = 0; i < n; ++i)
        u[i] = Vec2(std::cos(doubled[order[i]]), std::sin(doubled[order[i]]));
    std::vector<Vec2> prefix(n + 1, Vec2::Zero());
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + u[i];
    const Vec2 total = prefix[n];

    // arc [s, s+len) vs the rest; maximise |sum1|^2/n1 + |sum2|^2/n2
    double best = -1.0;
    int best_s = 0, best_len = 2;
    for (int s = 0; s < n; ++s)
        for (int len = 2; len <= n - 2; ++len) {
            const int e = s + len;
            // arc sum, wrapping past the end of the sorted sequence
            const Vec2 sum1 =
                e <= n ? Vec2(prefix[e] - prefix[s]) : Vec2(total - prefix[s] + prefix[e - n]);
            const Vec2 sum2 = total - sum1;
            const double score = sum1.squaredNorm() / len + sum2.squaredNorm() / (n - len);
            if (score > best) {
                best = score;
                best_s = s;
                best_len = len;
            }
        }
    if (best < 0) return false;

    cluster.assign(n, 1);
    for (int i = 0; i < best_len; ++i) cluster[order[(best_s + i) % n]] = 0;
    return true;
}

double circular_std(const std::vector<double>& doubled) {
    Vec2 mean = Vec2::Zero();
    for (double a : doubled) mean += Vec2(std::cos(a), std::sin(a));
    mean /= static_cast<double>(doubled.size());
    const double r = std::min(1.0, mean.norm());
    if (r <= 1e-12) return std::sqrt(-2.0 * std::log(1e-12));
    return std::sqrt(-2.0 * std::log(r));
}

}  // namespace

void split_merge(EmState& state, std::span<const Segment> segments,
                 std::span<const HomLine> lines, const EmConfig& cfg) {
    const int n = static_cast<int>(segments.size());
    const int k = static_cast<int>(state.candidates.size());

    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        state.affinities.row(i).maxCoeff(&arg);
        labels[i] = arg;
    }

    // --- split: in-image candidate with the widest angular spread ---
    int split_idx = -1;
    double split_spread = -1.0;
    for (int c = 0; c < k; ++c) {
        const Vec3& v = state.candidates[c].v;
        if (std::abs(v.z()) < 1e-9) continue;  // at infinity
        const double x = v.x() / v.z(), y = v.y() / v.z();
        if (std::abs(x) > 1.0 || std::abs(y) > 1.0) continue;  // outside the frame
        std::vector<double> doubled;
        for (int i = 0; i < n; ++i)
            if (labels[i] == c) doubled.push_back(2.0 * segment_angle(segments[i]));
        if (doubled.size() < 4) continue;
        const double spread = circular_std(doubled);
        if (spread > split_spread) {
            split_spread = spread;
            split_idx = c;
        }
    }

    if (split_idx >= 0) {
        std::vector<int> members;
        std::vector<double> doubled;
        for (int i = 0; i < n; ++i)
            if (labels[i] == split_idx) {
                members.push_back(i);
                doubled.push_back(2.0 * segment_angle(segments[i]));
            }
        std::vector<int> cluster;
        if (circular_two_means(doubled, cluster)) {
            Vec3 vs[2];
            bool ok = true;
            for (int half = 0; half < 2 && ok; ++half) {
                Mat3 m = Mat3::Zero();
                int count = 0;
                for (size_t j = 0; j < members.size(); ++j) {
                    if (cluster[j] != half) continue;
                    const int i = members[j];
                    const double wi = state.line_weights(i) * state.affinities(i, split_idx);
                    m.noalias() += wi * lines[i].coeffs * lines[i].coeffs.transpose();
                    ++count;
                }
                ok = count >= 2 &&
                     smallest_eigenvector(m, state.candidates[split_idx].v, vs[half]);
            }
            if (ok) {
                state.candidates[split_idx].v = canonical_sign(vs[0]);
                VpCandidate fresh;
                fresh.v = canonical_sign(vs[1]);
                fresh.prior_weight = state.candidates[split_idx].prior_weight;
                state.candidates.push_back(fresh);
            }
        }
    }

    // --- merge pairs closer than merge_angle ---
    bool merged = true;
    while (merged) {
        merged = false;
        const int kk = static_cast<int>(state.candidates.size());
        for (int a = 0; a < kk && !merged; ++a)
            for (int b = a + 1; b < kk && !merged; ++b) {
                if (angle_between_units(state.candidates[a].v, state.candidates[b].v) >=
                    cfg.merge_angle)
                    continue;
                const int keep = state.candidates[a].support >= state.candidates[b].support ? a : b;
                const int drop = keep == a ? b : a;
                const VpCandidate& ck = state.candidates[keep];
                const VpCandidate& cd = state.candidates[drop];
                const double wk = std::max(1, ck.support);
                const double wd = std::max(1, cd.support);
                Vec3 sum = wk * ck.v;
                sum += (ck.v.dot(cd.v) >= 0 ? 1.0 : -1.0) * wd * cd.v;
                VpCandidate out;
                out.v = canonical_sign(sum.normalized());
                out.support = ck.support + cd.support;
                out.prior_weight = std::max(ck.prior_weight, cd.prior_weight);
                state.candidates[keep] = out;
                state.candidates.erase(state.candidates.begin() + drop);
                merged = true;
            }
    }
}

std::string EmResult::to_json() const {
    nlohmann::json j;
    j["iterations"] = iterations;
    j["candidates"] = nlohmann::json::array();
    for (const VpCandidate& c : candidates) {
        const SphereCoord s = point_to_sphere(c.v);
        j["candidates"].push_back({{"v", {c.v.x(), c.v.y(), c.v.z()}},
                                   {"alpha", s.alpha},
                                   {"beta", s.beta},
                                   {"support", c.support}});
    }
    j["labels"] = labels;
    return j.dump(2);
}

EmResult run_em(std::span<const Segment> segments, const BinGrid& grid, const EmConfig& cfg) {
    if (segments.size() < 2) throw TooFewSegments("EM needs at least 2 segments");

    std::vector<HomLine> lines;
    lines.reserve(segments.size());
    for (const Segment& s : segments) lines.push_back(segment_to_line(s));

    const Eigen::MatrixXd sim = similarity_matrix(segments, cfg);
    const PriorMixture prior =
        cfg.uniform_prior ? PriorMixture::uniform() : prior_from_grid(grid, cfg.sigma_prior);

    EmState state;
    state.candidates = init_candidates(grid, cfg.k_init, cfg.theta_act);

    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
        state.iteration = iter + 1;
        e_step(state, segments, lines, prior, sim, cfg);

        std::vector<Vec3> before;
        before.reserve(state.candidates.size());
        for (const VpCandidate& c : state.candidates) before.push_back(c.v);
        m_step(state, lines);

        double movement = 0.0;
        for (size_t c = 0; c < state.candidates.size(); ++c)
            movement = std::max(movement, angle_between_units(before[c], state.candidates[c].v));

        bool structural = false;
        if (cfg.f_s > 0 && (iter + 1) % cfg.f_s == 0) {
            const size_t k_before = state.candidates.size();
            split_merge(state, segments, lines, cfg);
            structural = state.candidates.size() != k_before;
        }
        if (!structural && movement < cfg.tol) {
            ++iter;
            break;
        }
    }

    // refresh affinities/support for the final candidate set, then drop
    // unsupported candidates and refresh once more
    e_step(state, segments, lines, prior, sim, cfg);
    std::vector<VpCandidate> kept;
    for (const VpCandidate& c : state.candidates)
        if (c.support > 0) kept.push_back(c);
    if (!kept.empty() && kept.size() != state.candidates.size()) {
        state.candidates = std::move(kept);
        e_step(state, segments, lines, prior, sim, cfg);
    }

    EmResult result;
    result.candidates = state.candidates;
    result.affinities = state.affinities;
    result.iterations = iter;
    result.labels.resize(segments.size());
    for (int i = 0; i < static_cast<int>(segments.size()); ++i) {
        int arg = 0;
        state.affinities.row(i).maxCoeff(&arg);
        result.labels[i] = arg;
    }
    return result;
}

}  // namespace svp
