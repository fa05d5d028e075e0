#pragma once

// Independent plain-EM reference (no affinity modification, flat prior, no
// split/merge), mirroring the published iteration scheme. Shared between the
// unit tests and the acceptance checks; intentionally written against the
// public API only, with its own E/M algebra.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "svp/em_refine.hpp"

namespace svp_test {

inline svp::Vec3 ref_canonical(svp::Vec3 v) {
    if (v.z() < 0 || (v.z() == 0 && (v.x() < 0 || (v.x() == 0 && v.y() < 0)))) return -v;
    return v;
}

inline double ref_angle(const svp::Vec3& a, const svp::Vec3& b) {
    return std::acos(std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0));
}

struct RefResult {
    std::vector<svp::Vec3> v;
    std::vector<int> support;
    std::vector<int> labels;
    Eigen::MatrixXd w;
    int iterations = 0;
};

inline RefResult reference_plain_em(std::span<const svp::Segment> segments,
                                    const svp::BinGrid& grid, const svp::EmConfig& cfg) {
    using namespace svp;
    const int n = static_cast<int>(segments.size());
    std::vector<HomLine> lines;
    for (const Segment& s : segments) lines.push_back(segment_to_line(s));

    std::vector<Vec3> v;
    for (const VpCandidate& c : init_candidates(grid, cfg.k_init, cfg.theta_act))
        v.push_back(c.v);

    Eigen::MatrixXd w;
    std::vector<int> support;
    const double inv2s2 = 1.0 / (2.0 * cfg.sigma_em * cfg.sigma_em);

    const auto estep = [&] {
        const int k = static_cast<int>(v.size());
        w.resize(n, k);
        const double log_prior = std::log(1.0 / k + 1e-300);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd score(k);
            for (int c = 0; c < k; ++c) {
                double d2 = 0.0;
                try {
                    d2 = consistency_d2(segments[i], v[c]);
                } catch (const IndeterminateConsistency&) {
                }
                score(c) = -d2 * d2 * inv2s2 + log_prior;
            }
            const double m = score.maxCoeff();
            double sum = 0.0;
            for (int c = 0; c < k; ++c) {
                w(i, c) = std::exp(score(c) - m);
                sum += w(i, c);
            }
            w.row(i) /= sum;
        }
        support.assign(k, 0);
        for (int i = 0; i < n; ++i) {
            int arg = 0;
            w.row(i).maxCoeff(&arg);
            ++support[arg];
        }
    };

    const auto mstep = [&] {
        for (size_t c = 0; c < v.size(); ++c) {
            Mat3 m = Mat3::Zero();
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                const double wi = 1.0 * w(i, static_cast<int>(c));
                m.noalias() += wi * lines[i].coeffs * lines[i].coeffs.transpose();
                total += wi;
            }
            if (total <= 0.0) continue;
            Eigen::SelfAdjointEigenSolver<Mat3> eig(m);
            if (eig.info() != Eigen::Success) continue;
            const Vec3 lam = eig.eigenvalues();
            if (lam(2) <= 0.0) continue;
            if (lam(1) < 1e-6 * lam(2)) {
                // single effective constraint: settle the tie within its null
                // plane by projecting the previous direction onto the plane
                const Vec3 axis = eig.eigenvectors().col(2);
                const Vec3 proj = v[c] - v[c].dot(axis) * axis;
                v[c] = ref_canonical(proj.norm() < 1e-9 ? Vec3(eig.eigenvectors().col(0))
                                                        : proj.normalized());
                continue;
            }
            if (lam(1) - lam(0) < 1e-12) continue;
            v[c] = ref_canonical(eig.eigenvectors().col(0));
        }
    };

    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
        estep();
        std::vector<Vec3> before = v;
        mstep();
        double movement = 0.0;
        for (size_t c = 0; c < v.size(); ++c)
            movement = std::max(movement, ref_angle(before[c], v[c]));
        if (movement < cfg.tol) {
            ++iter;
            break;
        }
    }

    estep();
    std::vector<Vec3> kept;
    for (size_t c = 0; c < v.size(); ++c)
        if (support[c] > 0) kept.push_back(v[c]);
    if (!kept.empty() && kept.size() != v.size()) {
        v = std::move(kept);
        estep();
    }

    RefResult out;
    out.v = v;
    out.support = support;
    out.w = w;
    out.iterations = iter;
    out.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        w.row(i).maxCoeff(&arg);
        out.labels[i] = arg;
    }
    return out;
}

}  // namespace svp_test
