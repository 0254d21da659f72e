#ifndef FACECAP_TESTS_TEST_UTIL_HPP
#define FACECAP_TESTS_TEST_UTIL_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "facecap/common/rng.hpp"
#include "facecap/facemodel/facemodel.hpp"

namespace facecap::test {

// Small random rig with a dense random core tensor (no mesh smoothness);
// dims follow the spec's tiny-oracle example unless overridden.
inline FaceRig make_random_rig(int V, int n, int n_id, int m, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> core(static_cast<size_t>(3 * V) * (n + 1) * (n_id + 1));
    const auto slot = [&](int row, int e, int j) -> double& {
        return core[(static_cast<size_t>(row) * (n + 1) + e) * (n_id + 1) + j];
    };
    // Origin slice: points spread around the unit sphere shell, pushed to a
    // sane scale; bases: small random fields.
    for (int v = 0; v < V; ++v) {
        for (int a = 0; a < 3; ++a) slot(3 * v + a, 0, 0) = rng.uniform(-0.5, 0.5);
    }
    for (int e = 0; e <= n; ++e) {
        for (int j = 0; j <= n_id; ++j) {
            if (e == 0 && j == 0) continue;
            for (int r = 0; r < 3 * V; ++r) slot(r, e, j) = rng.uniform(-0.05, 0.05);
        }
    }
    Eigen::MatrixX2d lms(m, 2);
    std::vector<int> ids(m);
    for (int i = 0; i < m; ++i) {
        ids[i] = i % V;
        lms(i, 0) = rng.uniform(0.1, 0.9);
        lms(i, 1) = rng.uniform(0.1, 0.9);
    }
    return FaceRig(V, n, n_id, m, std::move(core), std::move(lms), std::move(ids));
}

inline ShapeParams random_state(const FaceRig& rig, Rng& rng, double rot_range = 0.4) {
    ShapeParams s = ShapeParams::neutral(rig);
    const Eigen::Vector3d axis =
        Eigen::Vector3d(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)).normalized();
    s.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(rng.uniform(-rot_range, rot_range), axis));
    s.translation = Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(2.5, 4.0));
    for (int k = 0; k < s.expression.size(); ++k) s.expression[k] = rng.uniform(0.0, 1.0);
    for (int j = 0; j < s.identity.size(); ++j) s.identity[j] = rng.uniform(-1.5, 1.5);
    for (int i = 0; i < s.displacement.size(); ++i) s.displacement[i] = rng.uniform(-2.0, 2.0);
    s.focal = rng.uniform(150, 500);
    return s;
}

} // namespace facecap::test

#endif
