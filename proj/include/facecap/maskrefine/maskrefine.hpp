#ifndef FACECAP_MASKREFINE_MASKREFINE_HPP
#define FACECAP_MASKREFINE_MASKREFINE_HPP

#include <vector>

#include "facecap/common/image.hpp"

namespace facecap {

// Unary/pairwise costs of the binary labeling energy on a grid:
//   E(L) = sum_i theta_i(L_i) + lambda * sum_{(i,j) adj, L_i != L_j} theta_ij
// with theta_i(face) = -log p_i, theta_i(nonface) = -log(1 - p_i) and
// theta_ij = exp(-|I_i - I_j|^2 / (2 sigma)). Face maps to the sink terminal.
struct GridEnergy {
    int width = 0;
    int height = 0;
    double lambda = 10.0;
    double sigma = 5.0;
    bool eight_connected = false;

    std::vector<double> face_cost;    // theta_i(face),    -log p
    std::vector<double> nonface_cost; // theta_i(nonface), -log(1-p)
    // Pairwise weights per pixel toward +x, +y (and +x+y, -x+y when
    // eight_connected); out-of-grid entries are 0.
    std::vector<double> w_right;
    std::vector<double> w_down;
    std::vector<double> w_down_right;
    std::vector<double> w_down_left;

    size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

constexpr double kProbabilityClamp = 1e-6;

// Eq.-1 energy construction; prob in [0,1], intensity in [0,255].
GridEnergy build_energy(const ProbabilityMap& prob, const GrayImage& intensity, double lambda,
                        double sigma, bool eight_connected = false);

// Globally optimal labeling via max-flow; ties resolved toward face.
BinaryMask min_cut(const GridEnergy& energy);

// Exact energy of a labeling; the testing/diagnostic view of Eq. 1.
double energy_of(const BinaryMask& labeling, const GridEnergy& energy);

// Bilinear upsample of the {0,1} field, re-thresholded at 0.5 (ties -> face).
BinaryMask upsample_mask(const BinaryMask& mask, int target_w, int target_h);

// prob -> energy -> min cut, at prob-map resolution.
BinaryMask refine_mask(const ProbabilityMap& prob, const GrayImage& intensity, double lambda = 10.0,
                       double sigma = 5.0, bool eight_connected = false);

} // namespace facecap

#endif
