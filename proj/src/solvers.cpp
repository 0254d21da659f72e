#include "facecap/solvers/solvers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <deque>

namespace facecap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd clamp_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

std::vector<uint8_t> bound_mask(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                const Eigen::VectorXd& hi) {
    std::vector<uint8_t> m(static_cast<size_t>(x.size()));
    for (int i = 0; i < x.size(); ++i) {
        constexpr double tiny = 1e-12;
        m[i] = x[i] <= lo[i] + tiny ? 1 : (x[i] >= hi[i] - tiny ? 2 : 0);
    }
    return m;
}

} // namespace

std::pair<Eigen::VectorXd, SolverReport> box_qn_minimize(const ObjectiveFn& objective,
                                                         const Eigen::VectorXd& lo,
                                                         const Eigen::VectorXd& hi,
                                                         const Eigen::VectorXd& x0,
                                                         const BoxQNOptions& opts) {
    const int dim = static_cast<int>(x0.size());
    if (lo.size() != dim || hi.size() != dim) throw std::invalid_argument("box_qn: bound dims");
    for (int i = 0; i < dim; ++i) {
        if (lo[i] > hi[i]) throw std::invalid_argument("box_qn: inverted bound at " + std::to_string(i));
    }

    Eigen::VectorXd x = clamp_box(x0, lo, hi);
    Eigen::VectorXd g(dim);
    double fx = objective(x, &g);
    if (!std::isfinite(fx) || !g.allFinite()) {
        throw std::runtime_error("box_qn: non-finite objective/gradient at start");
    }

    SolverReport report;
    std::deque<Eigen::VectorXd> mem_s, mem_y;
    std::deque<double> mem_rho;
    auto active = bound_mask(x, lo, hi);

    const auto pg_norm = [&]() { return (clamp_box(x - g, lo, hi) - x).lpNorm<Eigen::Infinity>(); };

    bool converged = false;
    for (int outer = 0; outer < opts.max_outer && !converged; ++outer) {
        mem_s.clear();
        mem_y.clear();
        mem_rho.clear();
        for (int it = 0; it < opts.inner_iters; ++it) {
            if (pg_norm() < opts.pg_tol) {
                converged = true;
                break;
            }
            // Two-loop L-BFGS direction.
            Eigen::VectorXd d = -g;
            if (!mem_s.empty()) {
                std::vector<double> alpha(mem_s.size());
                for (int k = static_cast<int>(mem_s.size()) - 1; k >= 0; --k) {
                    alpha[k] = mem_rho[k] * mem_s[k].dot(d);
                    d -= alpha[k] * mem_y[k];
                }
                const double gamma =
                    mem_s.back().dot(mem_y.back()) / mem_y.back().squaredNorm();
                d *= gamma;
                for (size_t k = 0; k < mem_s.size(); ++k) {
                    const double beta = mem_rho[k] * mem_y[k].dot(d);
                    d += (alpha[k] - beta) * mem_s[k];
                }
            }
            // Keep the direction inside the feasible cone at active bounds.
            for (int i = 0; i < dim; ++i) {
                if ((active[i] == 1 && d[i] < 0) || (active[i] == 2 && d[i] > 0)) d[i] = 0;
            }
            if (d.dot(g) >= 0) {
                d = -g;
                for (int i = 0; i < dim; ++i) {
                    if ((active[i] == 1 && d[i] < 0) || (active[i] == 2 && d[i] > 0)) d[i] = 0;
                }
                if (d.squaredNorm() == 0) {
                    converged = true;
                    break;
                }
            }

            // Backtracking Armijo on the projected path.
            double step = 1.0;
            bool accepted = false;
            Eigen::VectorXd xn;
            double fn = fx;
            for (int ls = 0; ls < 40; ++ls) {
                xn = clamp_box(x + step * d, lo, hi);
                if ((xn - x).lpNorm<Eigen::Infinity>() == 0) break;
                fn = objective(xn, nullptr);
                if (std::isfinite(fn) && fn <= fx + 1e-4 * g.dot(xn - x)) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break; // line search stalled; restart or give up

            Eigen::VectorXd gn(dim);
            fn = objective(xn, &gn);
            if (!std::isfinite(fn) || !gn.allFinite()) {
                throw std::runtime_error("box_qn: non-finite objective/gradient");
            }
            const Eigen::VectorXd s = xn - x;
            const Eigen::VectorXd yv = gn - g;
            const double sy = s.dot(yv);
            if (sy > 1e-12 * s.norm() * yv.norm()) {
                mem_s.push_back(s);
                mem_y.push_back(yv);
                mem_rho.push_back(1.0 / sy);
                if (static_cast<int>(mem_s.size()) > opts.memory) {
                    mem_s.pop_front();
                    mem_y.pop_front();
                    mem_rho.pop_front();
                }
            }
            auto new_active = bound_mask(xn, lo, hi);
            if (new_active != active) {
                mem_s.clear();
                mem_y.clear();
                mem_rho.clear();
            }
            active = std::move(new_active);
            x = std::move(xn);
            fx = fn;
            g = std::move(gn);
            ++report.iterations;
        }
    }

    report.objective = fx;
    report.converged = converged || pg_norm() < opts.pg_tol;
    report.grad_norm = pg_norm();
    return {x, report};
}

// --- PnP ---------------------------------------------------------------------

namespace {

double reprojection_sse(const std::vector<Eigen::Vector3d>& pts, const Landmarks2D& obs,
                        double focal, const Eigen::Vector2d& c, const Eigen::Matrix3d& R,
                        const Eigen::Vector3d& t) {
    double sse = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        const Eigen::Vector3d cam = R * pts[i] + t;
        if (cam.z() <= kProjectionZGuard) return kInf;
        const Eigen::Vector2d p(focal * cam.x() / cam.z() + c.x(), focal * cam.y() / cam.z() + c.y());
        sse += (p - obs[i]).squaredNorm();
    }
    return sse;
}

} // namespace

PnPResult pnp_refine(const std::vector<Eigen::Vector3d>& points3d, const Landmarks2D& points2d,
                     double focal, const Eigen::Vector2d& principal,
                     const Eigen::Quaterniond& init_rotation, const Eigen::Vector3d& init_translation,
                     const PnPOptions& opts) {
    const size_t N = points3d.size();
    if (N < 4) throw std::invalid_argument("pnp_refine: need >= 4 correspondences");
    if (points2d.size() != N) throw std::invalid_argument("pnp_refine: point count mismatch");

    Eigen::Quaterniond q = init_rotation.normalized();
    Eigen::Vector3d t = init_translation;
    double err = reprojection_sse(points3d, points2d, focal, principal, q.toRotationMatrix(), t);
    if (!std::isfinite(err)) throw std::invalid_argument("pnp_refine: init behind camera");

    double damping = opts.initial_damping;
    PnPResult result;
    for (int iter = 0; iter < opts.max_iters; ++iter) {
        const Eigen::Matrix3d R = q.toRotationMatrix();
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
        for (size_t i = 0; i < N; ++i) {
            const Eigen::Vector3d rv = R * points3d[i];
            const Eigen::Vector3d cam = rv + t;
            const double inv_z = 1.0 / cam.z();
            Eigen::Matrix<double, 2, 3> dpix;
            dpix << focal * inv_z, 0, -focal * cam.x() * inv_z * inv_z, 0, focal * inv_z,
                -focal * cam.y() * inv_z * inv_z;
            Eigen::Matrix<double, 2, 6> J;
            J.block<2, 3>(0, 0) = dpix * (-skew(rv));
            J.block<2, 3>(0, 3) = dpix;
            const Eigen::Vector2d r(focal * cam.x() * inv_z + principal.x() - points2d[i].x(),
                                    focal * cam.y() * inv_z + principal.y() - points2d[i].y());
            H += J.transpose() * J;
            b += J.transpose() * r;
        }

        bool stepped = false;
        for (int attempt = 0; attempt < 20; ++attempt) {
            Eigen::Matrix<double, 6, 6> Hd = H;
            Hd.diagonal().array() += damping;
            const Eigen::Matrix<double, 6, 1> delta = Hd.ldlt().solve(-b);
            if (!delta.allFinite()) {
                damping = std::min(damping * 10, 1e12);
                continue;
            }
            const Eigen::Quaterniond qn =
                (rotation_from_vector(delta.head<3>()) * q).normalized();
            const Eigen::Vector3d tn = t + delta.tail<3>();
            const double err_n =
                reprojection_sse(points3d, points2d, focal, principal, qn.toRotationMatrix(), tn);
            if (err_n <= err) {
                const double step_size = delta.norm();
                q = qn;
                t = tn;
                err = err_n;
                damping = std::max(damping * 0.5, 1e-12);
                stepped = true;
                result.iterations = iter + 1;
                if (step_size < opts.step_tol) result.converged = true;
                break;
            }
            damping = std::min(damping * 10, 1e12);
        }
        if (!stepped || result.converged) {
            result.converged = result.converged || !stepped; // stall at a local min counts
            break;
        }
    }
    result.rotation = q;
    result.translation = t;
    result.rmse = std::sqrt(err / static_cast<double>(N));
    return result;
}

// --- Eq. 4 / Eq. 3 objectives --------------------------------------------------

namespace {

// Contraction of the landmark core with [1; x] over the expression axis:
// verts = M * [1; u], so column j+1 is the identity-j direction.
Eigen::MatrixXd landmark_identity_matrix(const FaceRig& rig, const Eigen::VectorXd& x) {
    const int rows = 3 * rig.landmark_count();
    const int n = rig.expression_count();
    const int nid = rig.identity_count();
    Eigen::MatrixXd M(rows, nid + 1);
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j <= nid; ++j) {
            double acc = rig.lm_core(r, 0, j);
            for (int e = 1; e <= n; ++e) acc += x[e - 1] * rig.lm_core(r, e, j);
            M(r, j) = acc;
        }
    }
    return M;
}

struct ResidualAccum {
    double sse = 0;
    bool valid = true;
};

// Accumulates the reprojection SSE and requested gradients for one frame's
// rigid pose against observed landmarks, given verts = M * [1; u].
void accumulate_frame(const Eigen::MatrixXd& M, const Eigen::VectorXd& u_h,
                      const Eigen::Matrix3d& R, const Eigen::Vector3d& t, double focal,
                      const Eigen::Vector2d& c, const Landmarks2D& observed, ResidualAccum& acc,
                      Eigen::VectorXd* grad_u, double* grad_f, const Eigen::MatrixXd* B,
                      Eigen::VectorXd* grad_x) {
    const int m = static_cast<int>(observed.size());
    for (int i = 0; i < m && acc.valid; ++i) {
        const Eigen::Vector3d vert = M.middleRows(3 * i, 3) * u_h;
        const Eigen::Vector3d cam = R * vert + t;
        if (cam.z() <= kProjectionZGuard) {
            acc.valid = false;
            return;
        }
        const double inv_z = 1.0 / cam.z();
        const Eigen::Vector2d p(focal * cam.x() * inv_z + c.x(), focal * cam.y() * inv_z + c.y());
        const Eigen::Vector2d r = p - observed[i];
        acc.sse += r.squaredNorm();
        if (!grad_u && !grad_f && !grad_x) continue;
        Eigen::Matrix<double, 2, 3> dpix;
        dpix << focal * inv_z, 0, -focal * cam.x() * inv_z * inv_z, 0, focal * inv_z,
            -focal * cam.y() * inv_z * inv_z;
        if (grad_u) {
            const auto dvert_du = M.block(3 * i, 1, 3, M.cols() - 1);
            grad_u->noalias() += 2.0 * (dpix * R * dvert_du).transpose() * r;
        }
        if (grad_x) {
            grad_x->noalias() += 2.0 * (dpix * R * B->middleRows(3 * i, 3)).transpose() * r;
        }
        if (grad_f) *grad_f += 2.0 * r.dot(Eigen::Vector2d(cam.x() * inv_z, cam.y() * inv_z));
    }
}

Eigen::VectorXd homogeneous(const Eigen::VectorXd& u) {
    Eigen::VectorXd h(u.size() + 1);
    h[0] = 1.0;
    h.tail(u.size()) = u;
    return h;
}

} // namespace

double reconstruction_objective(const ShapeParams& s, const Landmarks2D& observed,
                                const FaceRig& rig, const Eigen::Vector2d& principal,
                                Eigen::VectorXd* grad_x, Eigen::VectorXd* grad_u, double* grad_f) {
    if (static_cast<int>(observed.size()) != rig.landmark_count()) {
        throw std::invalid_argument("reconstruction_objective: landmark count");
    }
    const Eigen::MatrixXd M = landmark_identity_matrix(rig, s.expression);
    Eigen::MatrixXd B;
    if (grad_x) {
        const LandmarkBasis basis = landmark_basis(rig, s.identity);
        B = basis.B;
        grad_x->setZero(rig.expression_count());
    }
    if (grad_u) grad_u->setZero(rig.identity_count());
    if (grad_f) *grad_f = 0;

    ResidualAccum acc;
    accumulate_frame(M, homogeneous(s.identity), s.rotation.normalized().toRotationMatrix(),
                     s.translation, s.focal, principal, observed, acc, grad_u, grad_f,
                     grad_x ? &B : nullptr, grad_x);
    return acc.valid ? acc.sse : kInf;
}

double keyframes_objective(const std::vector<Keyframe>& keyframes, const FaceRig& rig,
                           const Eigen::VectorXd& u, double focal, const Eigen::Vector2d& principal,
                           Eigen::VectorXd* grad_u, double* grad_f) {
    if (keyframes.empty()) throw std::invalid_argument("keyframes_objective: empty keyframe list");
    if (grad_u) grad_u->setZero(rig.identity_count());
    if (grad_f) *grad_f = 0;
    const Eigen::VectorXd u_h = homogeneous(u);
    ResidualAccum acc;
    for (const Keyframe& kf : keyframes) {
        const Eigen::MatrixXd M = landmark_identity_matrix(rig, kf.expression);
        accumulate_frame(M, u_h, kf.rotation.normalized().toRotationMatrix(), kf.translation, focal,
                         principal, kf.landmarks, acc, grad_u, grad_f, nullptr, nullptr);
        if (!acc.valid) return kInf;
    }
    return acc.sse;
}

double minimize_log_grid_golden(const std::function<double(double)>& f, double lo, double hi,
                                int grid_points, double rel_tol) {
    if (!(lo > 0) || hi <= lo) throw std::invalid_argument("minimize_log_grid_golden: bad range");
    const double llo = std::log(lo), lhi = std::log(hi);
    int best = 0;
    double best_val = kInf;
    std::vector<double> grid(static_cast<size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i) {
        grid[i] = llo + (lhi - llo) * i / (grid_points - 1);
        const double v = f(std::exp(grid[i]));
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    double a = grid[std::max(0, best - 1)];
    double b = grid[std::min(grid_points - 1, best + 1)];
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
    double f1 = f(std::exp(c1)), f2 = f(std::exp(c2));
    while (b - a > rel_tol) {
        if (f1 < f2) {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - phi * (b - a);
            f1 = f(std::exp(c1));
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + phi * (b - a);
            f2 = f(std::exp(c2));
        }
    }
    const double x = std::exp(0.5 * (a + b));
    return f(x) <= best_val ? x : std::exp(grid[best]);
}

// --- Eq. 4 alternation ----------------------------------------------------------

ShapeParams fit_ground_truth(const Landmarks2D& observed, const FaceRig& rig,
                             const ShapeParams& init, const Eigen::Vector2d& principal,
                             const FitOptions& opts, SolverReport* report) {
    const int n = rig.expression_count();
    const int nid = rig.identity_count();
    const int m = rig.landmark_count();
    if (static_cast<int>(observed.size()) != m) {
        throw std::invalid_argument("fit_ground_truth: landmark count");
    }

    ShapeParams s = init;
    s.displacement.setZero(2 * m);
    const auto objective = [&](const ShapeParams& sp) {
        return reconstruction_objective(sp, observed, rig, principal);
    };
    double fx = objective(s);
    if (!std::isfinite(fx)) throw std::invalid_argument("fit_ground_truth: init behind camera");

    SolverReport rep;
    for (int round = 0; round < opts.outer_rounds; ++round) {
        const ShapeParams saved = s;
        const double round_start = fx;

        // (a) rigid pose
        {
            const LandmarkBasis basis = landmark_basis(rig, s.identity);
            const Eigen::VectorXd verts = basis.b0 + basis.B * s.expression;
            std::vector<Eigen::Vector3d> pts(static_cast<size_t>(m));
            for (int i = 0; i < m; ++i) pts[i] = verts.segment<3>(3 * i);
            const PnPResult pnp = pnp_refine(pts, observed, s.focal, principal, s.rotation,
                                             s.translation, opts.pnp_opts);
            ShapeParams cand = s;
            cand.rotation = pnp.rotation;
            cand.translation = pnp.translation;
            if (objective(cand) <= fx) {
                s = cand;
                fx = objective(s);
            }
        }

        // (b) expression coefficients in [0,1]^n
        if (opts.optimize_expression && n > 0) {
            ShapeParams work = s;
            const auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
                work.expression = x;
                if (!grad) return reconstruction_objective(work, observed, rig, principal);
                Eigen::VectorXd gx;
                const double v =
                    reconstruction_objective(work, observed, rig, principal, &gx, nullptr, nullptr);
                if (grad) *grad = std::isfinite(v) ? gx : Eigen::VectorXd::Zero(n);
                return v;
            };
            auto [x_opt, r] = box_qn_minimize(fn, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n),
                                              s.expression, opts.coeff_opts);
            if (r.objective <= fx) {
                s.expression = x_opt;
                fx = r.objective;
            }
        }

        // (c) identity coefficients in the sigma box
        if (opts.optimize_identity && nid > 0) {
            ShapeParams work = s;
            const auto fn = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
                work.identity = u;
                if (!grad) return reconstruction_objective(work, observed, rig, principal);
                Eigen::VectorXd gu;
                const double v =
                    reconstruction_objective(work, observed, rig, principal, nullptr, &gu, nullptr);
                if (grad) *grad = std::isfinite(v) ? gu : Eigen::VectorXd::Zero(nid);
                return v;
            };
            const Eigen::VectorXd lo = Eigen::VectorXd::Constant(nid, -opts.identity_bound);
            const Eigen::VectorXd hi = Eigen::VectorXd::Constant(nid, opts.identity_bound);
            auto [u_opt, r] = box_qn_minimize(fn, lo, hi, s.identity, opts.coeff_opts);
            if (r.objective <= fx) {
                s.identity = u_opt;
                fx = r.objective;
            }
        }

        // (d) focal on a log grid with golden-section polish
        if (opts.optimize_focal) {
            ShapeParams work = s;
            const auto fn = [&](double f) {
                work.focal = f;
                return reconstruction_objective(work, observed, rig, principal);
            };
            const double f_opt = minimize_log_grid_golden(
                fn, opts.focal_lo_frac * opts.crop_width, opts.focal_hi_frac * opts.crop_width,
                opts.focal_grid, 1e-8);
            if (fn(f_opt) <= fx) {
                s.focal = f_opt;
                fx = fn(f_opt);
            }
        }

        rep.iterations = round + 1;
        if (fx > round_start) { // divergence: revert the round and stop
            s = saved;
            fx = round_start;
            break;
        }
    }

    // D carries whatever reprojection residual is left (Eq. 4 has no D term).
    const Landmarks2D projected = project_landmarks(
        landmark_basis(rig, s.identity), s.rotation, s.translation, s.expression,
        Eigen::VectorXd::Zero(2 * m), s.focal, principal);
    for (int i = 0; i < m; ++i) {
        s.displacement[2 * i] = observed[i].x() - projected[i].x();
        s.displacement[2 * i + 1] = observed[i].y() - projected[i].y();
    }

    rep.objective = fx;
    rep.converged = true;
    rep.grad_norm = 0;
    if (report) *report = rep;
    return s;
}

std::pair<Eigen::VectorXd, double> solve_identity_focal(const std::vector<Keyframe>& keyframes,
                                                        const FaceRig& rig,
                                                        const Eigen::VectorXd& u0, double f0,
                                                        const Eigen::Vector2d& principal,
                                                        const IdentityFocalOptions& opts,
                                                        SolverReport* report) {
    if (keyframes.empty()) throw std::invalid_argument("solve_identity_focal: no keyframes");
    const int nid = rig.identity_count();
    Eigen::VectorXd u = u0;
    double focal = f0;
    double fx = keyframes_objective(keyframes, rig, u, focal, principal);

    SolverReport rep;
    for (int alt = 0; alt < opts.max_alternations; ++alt) {
        const double before = fx;

        const auto u_fn = [&](const Eigen::VectorXd& uu, Eigen::VectorXd* grad) {
            if (!grad) return keyframes_objective(keyframes, rig, uu, focal, principal);
            Eigen::VectorXd gu;
            const double v = keyframes_objective(keyframes, rig, uu, focal, principal, &gu, nullptr);
            *grad = std::isfinite(v) ? gu : Eigen::VectorXd::Zero(nid);
            return v;
        };
        const Eigen::VectorXd lo = Eigen::VectorXd::Constant(nid, -opts.identity_bound);
        const Eigen::VectorXd hi = Eigen::VectorXd::Constant(nid, opts.identity_bound);
        auto [u_opt, r] = box_qn_minimize(u_fn, lo, hi, u, opts.u_opts);
        if (r.objective <= fx) {
            u = u_opt;
            fx = r.objective;
        }

        const auto f_fn = [&](double f) { return keyframes_objective(keyframes, rig, u, f, principal); };
        const double f_opt =
            minimize_log_grid_golden(f_fn, opts.focal_lo, opts.focal_hi, opts.focal_grid, 1e-10);
        if (f_fn(f_opt) <= fx) {
            focal = f_opt;
            fx = f_fn(f_opt);
        }

        rep.iterations = alt + 1;
        if (before - fx <= opts.rel_tol * std::max(1.0, std::abs(before))) {
            rep.converged = true;
            break;
        }
    }
    rep.objective = fx;
    if (report) *report = rep;
    return {u, focal};
}

} // namespace facecap
