#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svp/errors.hpp"
#include "svp/geometry.hpp"
#include "svp/sphere_raster.hpp"

namespace svp {

struct EmConfig {
    int k_init = 25;
    double sigma_prior = kPi / (1.282 * 20);
    double sigma_em = 0.001;  // scale of the d2 likelihood (~2.6 degree soft gate)
    double k_phi = 9.0;       // angle gain of the similarity measure
    double sigma_sim = 0.2;   // distance scale of the similarity measure
    double lambda_mix = 0.2;  // neighbour-consensus share of the affinity
    double eps_weight = 0.05; // floor of the line weights
    int f_s = 5;              // split-merge period in iterations; 0 disables
    double merge_angle = 2.0 * kPi / 180.0;
    int max_iters = 25;
    double tol = 1e-4;  // convergence: max candidate movement in radians
    double theta_act = kDefaultThetaAct;  // activation floor for init peaks
    bool uniform_prior = false;           // replace the grid prior with a flat one
};

struct VpCandidate {
    Vec3 v = Vec3::UnitZ();  // unit, front half-sphere
    int support = 0;
    double prior_weight = 0.0;
};

// Mixture of isotropic Gaussians in (alpha, beta), one per grid bin.
struct PriorMixture {
    int n = 0;
    double sigma = 0.1;
    std::vector<double> weights;  // per bin, summing to 1; empty means flat

    double density(const SphereCoord& at) const;
    static PriorMixture uniform();
};

PriorMixture prior_from_grid(const BinGrid& grid, double sigma_prior);

// One candidate per top local maximum, strongest first.
std::vector<VpCandidate> init_candidates(const BinGrid& grid, int k_init,
                                         double theta_act = kDefaultThetaAct);

// S_ij = cos(clamp(k_phi * angle)) * exp(-d^2 / sigma_sim^2); symmetric, S_ii = 1.
double similarity(const Segment& a, const Segment& b, const EmConfig& cfg);

Eigen::MatrixXd similarity_matrix(std::span<const Segment> segments, const EmConfig& cfg);

// Shortest Euclidean distance between two segments (0 if they intersect).
double segment_distance(const Segment& a, const Segment& b);

struct EmState {
    std::vector<VpCandidate> candidates;
    Eigen::MatrixXd affinities;    // |segments| x |candidates|, rows sum to 1
    Eigen::VectorXd line_weights;  // rho_i in [eps_weight, 1]
    int iteration = 0;
};

// Posterior affinities with the neighbour-consensus mix, plus line weights;
// updates candidate supports (argmax counts).
void e_step(EmState& state, std::span<const Segment> segments, std::span<const HomLine> lines,
            const PriorMixture& prior, const Eigen::MatrixXd& sim, const EmConfig& cfg);

// Candidate update: smallest eigenvector of sum_i rho_i w_ik l_i l_i^T.
// Degenerate candidates (tied smallest eigenvalues) keep their position.
void m_step(EmState& state, std::span<const HomLine> lines);

// Splits the in-image candidate with the widest circular spread of assigned
// segment angles, then merges candidate pairs closer than merge_angle.
void split_merge(EmState& state, std::span<const Segment> segments,
                 std::span<const HomLine> lines, const EmConfig& cfg);

struct EmResult {
    std::vector<VpCandidate> candidates;
    Eigen::MatrixXd affinities;
    std::vector<int> labels;  // per-segment argmax candidate index
    int iterations = 0;

    std::string to_json() const;
};

EmResult run_em(std::span<const Segment> segments, const BinGrid& grid, const EmConfig& cfg);

}  // namespace svp
