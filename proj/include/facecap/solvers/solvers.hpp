#ifndef FACECAP_SOLVERS_SOLVERS_HPP
#define FACECAP_SOLVERS_SOLVERS_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "facecap/facemodel/facemodel.hpp"

namespace facecap {

struct SolverReport {
    int iterations = 0;
    double objective = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    double grad_norm = std::numeric_limits<double>::quiet_NaN();
};

// Objective callable: returns f(x); fills *grad when non-null.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct BoxQNOptions {
    int max_outer = 3;   // restart rounds (memory dropped between rounds)
    int inner_iters = 50;
    int memory = 8;
    double pg_tol = 1e-10; // projected-gradient infinity norm
};

// Limited-memory quasi-Newton with gradient projection onto the box.
// Monotone: objective(x*) <= objective(x0). Result is always feasible.
std::pair<Eigen::VectorXd, SolverReport> box_qn_minimize(const ObjectiveFn& objective,
                                                         const Eigen::VectorXd& lo,
                                                         const Eigen::VectorXd& hi,
                                                         const Eigen::VectorXd& x0,
                                                         const BoxQNOptions& opts = {});

struct PnPOptions {
    int max_iters = 50;
    double step_tol = 1e-12;
    double initial_damping = 1e-6;
};

struct PnPResult {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double rmse = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    int iterations = 0;
};

// Damped Gauss-Newton on the rotation tangent space; reprojection error is
// non-increasing across accepted steps.
PnPResult pnp_refine(const std::vector<Eigen::Vector3d>& points3d, const Landmarks2D& points2d,
                     double focal, const Eigen::Vector2d& principal,
                     const Eigen::Quaterniond& init_rotation, const Eigen::Vector3d& init_translation,
                     const PnPOptions& opts = {});

// Reprojection objective of a full shape state against observed landmarks
// (the ground-truth-fitting objective), with optional analytic gradients.
double reconstruction_objective(const ShapeParams& s, const Landmarks2D& observed,
                                const FaceRig& rig, const Eigen::Vector2d& principal,
                                Eigen::VectorXd* grad_x = nullptr, Eigen::VectorXd* grad_u = nullptr,
                                double* grad_f = nullptr);

// A collected key pose/expression with its tracked landmarks.
struct Keyframe {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d(0, 0, 3);
    Eigen::VectorXd expression;
    Landmarks2D landmarks;
};

// Joint keyframe reprojection objective in (u, f), summed over frames and
// landmarks; the identity/focal alternation minimizes this.
double keyframes_objective(const std::vector<Keyframe>& keyframes, const FaceRig& rig,
                           const Eigen::VectorXd& u, double focal, const Eigen::Vector2d& principal,
                           Eigen::VectorXd* grad_u = nullptr, double* grad_f = nullptr);

struct FitOptions {
    int outer_rounds = 3;
    BoxQNOptions coeff_opts{3, 50, 8, 1e-12};
    PnPOptions pnp_opts;
    double identity_bound = 3.0; // PCA-sigma units
    double focal_lo_frac = 0.25; // x crop width
    double focal_hi_frac = 8.0;
    double crop_width = 128.0;
    int focal_grid = 17;
    bool optimize_focal = true;
    bool optimize_identity = true;
    bool optimize_expression = true;
};

// Alternating minimization of the reprojection objective over
// (R, t) / x / u / f. D is not part of the objective; it is returned as the
// leftover per-landmark residual offsets.
ShapeParams fit_ground_truth(const Landmarks2D& observed, const FaceRig& rig,
                             const ShapeParams& init, const Eigen::Vector2d& principal,
                             const FitOptions& opts = {}, SolverReport* report = nullptr);

struct IdentityFocalOptions {
    int max_alternations = 20;
    double rel_tol = 1e-6;
    BoxQNOptions u_opts{3, 50, 8, 1e-12};
    double identity_bound = 3.0;
    double focal_lo = 32.0;  // 0.25 x 128 crop
    double focal_hi = 1024.0;
    int focal_grid = 17;
};

// Alternating u-step / f-step over all keyframes jointly.
std::pair<Eigen::VectorXd, double> solve_identity_focal(const std::vector<Keyframe>& keyframes,
                                                        const FaceRig& rig,
                                                        const Eigen::VectorXd& u0, double f0,
                                                        const Eigen::Vector2d& principal,
                                                        const IdentityFocalOptions& opts = {},
                                                        SolverReport* report = nullptr);

// 1-D minimizer used for the focal search: coarse log-spaced grid then
// golden-section polish inside the best bracket.
double minimize_log_grid_golden(const std::function<double(double)>& f, double lo, double hi,
                                int grid_points = 17, double rel_tol = 1e-8);

} // namespace facecap

#endif
