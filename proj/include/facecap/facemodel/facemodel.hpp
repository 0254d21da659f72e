#ifndef FACECAP_FACEMODEL_FACEMODEL_HPP
#define FACECAP_FACEMODEL_FACEMODEL_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "facecap/common/geometry.hpp"
#include "facecap/common/rng.hpp"

namespace facecap {

using Landmarks2D = std::vector<Eigen::Vector2d>;

// Thrown when a landmark vertex lands at or behind the camera plane.
class ProjectionError : public std::runtime_error {
public:
    ProjectionError(int landmark, double z)
        : std::runtime_error("landmark " + std::to_string(landmark) +
                             " at or behind camera plane (z=" + std::to_string(z) + ")"),
          landmark_index(landmark) {}
    int landmark_index;
};

// Blendshape/identity face representation. The core tensor maps identity
// coefficients to a neutral shape and expression bases:
//   [b0, B](u) = C[.., .., 0] + sum_j u_j * C[.., .., j+1]
// Expression axis slot 0 is the neutral face, slots 1..n the blendshape
// bases; identity axis slot 0 is the zero-coefficient origin slice, slots
// 1..n_id the identity bases (one PCA sigma per unit coefficient).
// Immutable after construction; all operations on it are pure.
class FaceRig {
public:
    FaceRig(int vertex_count, int expression_count, int identity_count, int landmark_count,
            std::vector<double> core_tensor, Eigen::MatrixX2d mean_landmarks,
            std::vector<int> landmark_indices);

    int vertex_count() const { return V_; }
    int expression_count() const { return n_; }
    int identity_count() const { return n_id_; }
    int landmark_count() const { return m_; }

    // core(row, e, j): row in [0,3V), e in [0,n], j in [0,n_id].
    double core(int row, int e, int j) const {
        return core_[(static_cast<size_t>(row) * (n_ + 1) + e) * (n_id_ + 1) + j];
    }
    const std::vector<double>& core_tensor() const { return core_; }

    const Eigen::MatrixX2d& mean_landmarks() const { return mean_landmarks_; }
    const std::vector<int>& landmark_indices() const { return landmark_indices_; }

    // Landmark-row-restricted core view, 3m rows; used by the solvers so a
    // fit never touches non-landmark vertices.
    double lm_core(int row, int e, int j) const {
        return lm_core_[(static_cast<size_t>(row) * (n_ + 1) + e) * (n_id_ + 1) + j];
    }

private:
    int V_, n_, n_id_, m_;
    std::vector<double> core_;    // (3V) x (n+1) x (n_id+1)
    std::vector<double> lm_core_; // (3m) x (n+1) x (n_id+1)
    Eigen::MatrixX2d mean_landmarks_;
    std::vector<int> landmark_indices_;
};

// Full per-frame face state S = {R, t, x, D, u, f}.
struct ShapeParams {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d(0, 0, 3);
    Eigen::VectorXd expression;   // n coefficients in [0,1]
    Eigen::VectorXd displacement; // 2m pixel offsets, (dx0, dy0, dx1, ...)
    Eigen::VectorXd identity;     // n_id coefficients, sigma units
    double focal = 270;           // pixels

    static ShapeParams neutral(const FaceRig& rig);
};

// The regressed subset Q = [R, t, x, D], flattened as
// [rotation vector (3), translation (3), x (n), D (2m)].
struct ShapeVector {
    Eigen::VectorXd values;

    static int length(int n, int m) { return 6 + n + 2 * m; }

    auto rot() { return values.segment<3>(0); }
    auto trans() { return values.segment<3>(3); }
    auto expr(int n) { return values.segment(6, n); }
    auto disp(int n, int m) { return values.segment(6 + n, 2 * m); }
    auto rot() const { return values.segment<3>(0); }
    auto trans() const { return values.segment<3>(3); }
    auto expr(int n) const { return values.segment(6, n); }
    auto disp(int n, int m) const { return values.segment(6 + n, 2 * m); }
};

ShapeVector flatten_shape(const ShapeParams& s);
// Rebuilds full params from Q plus the held-fixed (u, f).
ShapeParams unflatten_shape(const ShapeVector& q, int n, int m,
                            const Eigen::VectorXd& identity, double focal);

// [b0, B] = C x [1; u]. b0 has 3V entries, B is (3V) x n.
void evaluate_rig(const Eigen::VectorXd& u, const FaceRig& rig,
                  Eigen::VectorXd& b0, Eigen::MatrixXd& B);

// b0 + B x for the full mesh.
Eigen::VectorXd shape_vertices(const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                               const FaceRig& rig, bool clamp_expression = false);

// Landmark-restricted (b0, B), 3m rows; cache this per identity for the
// regression hot path.
struct LandmarkBasis {
    Eigen::VectorXd b0; // 3m
    Eigen::MatrixXd B;  // 3m x n
};
LandmarkBasis landmark_basis(const FaceRig& rig, const Eigen::VectorXd& u);

// Pinhole projection of one camera-space point; throws on z <= eps.
constexpr double kProjectionZGuard = 1e-6;

// p_i = Pi_f(R v_i + t) + d_i with principal point (cx, cy).
Landmarks2D project_landmarks(const ShapeParams& s, const FaceRig& rig,
                              const Eigen::Vector2d& principal);
Landmarks2D project_landmarks(const LandmarkBasis& basis, const Eigen::Quaterniond& R,
                              const Eigen::Vector3d& t, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& displacement, double focal,
                              const Eigen::Vector2d& principal);

// Axis-aligned bound of every projected mesh vertex, expanded by `margin`.
RectF project_bbox(const ShapeParams& s, const FaceRig& rig,
                   const Eigen::Vector2d& principal, double margin = 0.2);

// Analytic Jacobians of the projected landmarks. Rotation uses the left
// tangent (R <- exp(w^) R); rows are (x_i, y_i) pairs.
struct LandmarkJacobians {
    Eigen::MatrixXd d_rot;   // 2m x 3
    Eigen::MatrixXd d_trans; // 2m x 3
    Eigen::MatrixXd d_expr;  // 2m x n
    Eigen::MatrixXd d_ident; // 2m x n_id
    Eigen::VectorXd d_focal; // 2m
};
LandmarkJacobians landmark_jacobians(const ShapeParams& s, const FaceRig& rig,
                                     const Eigen::Vector2d& principal);

// Distance between the designated outer eye-corner landmarks (0 and 1).
double interocular_distance(const Landmarks2D& p);

// --- rig container ----------------------------------------------------------
// Binary layout: magic "FCRG", version, dims (V, n, n_id, m), core tensor
// float32 LE, mean landmarks float32, landmark indices uint32.
void save_rig(const std::string& path, const FaceRig& rig);
FaceRig load_rig(const std::string& path);

// --- procedural toy rigs -----------------------------------------------------
// Stand-in for a scanned core tensor: ellipsoid head with smooth random
// expression/identity displacement fields. Triangles are carried for the
// synthetic renderer; the rig itself stays mesh-agnostic.
struct ToyRig {
    FaceRig rig;
    std::vector<std::array<int, 3>> triangles;
};

struct ToyRigParams {
    int rings = 10;
    int sectors = 14;      // vertex count = rings * sectors + 2
    int expressions = 12;
    int identities = 8;
    int landmarks = 73;
    double expression_scale = 0.07; // model units at full activation
    double identity_scale = 0.05;   // model units per sigma
    uint64_t seed = 1;
};

ToyRig make_toy_rig(const ToyRigParams& params);

} // namespace facecap

#endif
