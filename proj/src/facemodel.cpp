#include "facecap/facemodel/facemodel.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "facecap/common/binio.hpp"
#include "facecap/common/log.hpp"

namespace facecap {

FaceRig::FaceRig(int vertex_count, int expression_count, int identity_count, int landmark_count,
                 std::vector<double> core_tensor, Eigen::MatrixX2d mean_landmarks,
                 std::vector<int> landmark_indices)
    : V_(vertex_count),
      n_(expression_count),
      n_id_(identity_count),
      m_(landmark_count),
      core_(std::move(core_tensor)),
      mean_landmarks_(std::move(mean_landmarks)),
      landmark_indices_(std::move(landmark_indices)) {
    if (V_ <= 0 || n_ < 0 || n_id_ < 0 || m_ <= 0) throw std::invalid_argument("FaceRig: bad dims");
    const size_t expected = static_cast<size_t>(3 * V_) * (n_ + 1) * (n_id_ + 1);
    if (core_.size() != expected) throw std::invalid_argument("FaceRig: core tensor size mismatch");
    if (mean_landmarks_.rows() != m_) throw std::invalid_argument("FaceRig: mean landmark count");
    if (static_cast<int>(landmark_indices_.size()) != m_) {
        throw std::invalid_argument("FaceRig: landmark index count");
    }
    for (int idx : landmark_indices_) {
        if (idx < 0 || idx >= V_) throw std::invalid_argument("FaceRig: landmark index out of range");
    }
    for (double v : core_) {
        if (!std::isfinite(v)) throw std::invalid_argument("FaceRig: non-finite core tensor");
    }
    // Restrict the tensor to landmark vertex rows once.
    const int stride = (n_ + 1) * (n_id_ + 1);
    lm_core_.resize(static_cast<size_t>(3 * m_) * stride);
    for (int i = 0; i < m_; ++i) {
        const int v = landmark_indices_[i];
        for (int a = 0; a < 3; ++a) {
            const double* src = core_.data() + static_cast<size_t>(3 * v + a) * stride;
            double* dst = lm_core_.data() + static_cast<size_t>(3 * i + a) * stride;
            std::copy(src, src + stride, dst);
        }
    }
}

ShapeParams ShapeParams::neutral(const FaceRig& rig) {
    ShapeParams s;
    s.expression = Eigen::VectorXd::Zero(rig.expression_count());
    s.displacement = Eigen::VectorXd::Zero(2 * rig.landmark_count());
    s.identity = Eigen::VectorXd::Zero(rig.identity_count());
    return s;
}

ShapeVector flatten_shape(const ShapeParams& s) {
    ShapeVector q;
    const int n = static_cast<int>(s.expression.size());
    const int m2 = static_cast<int>(s.displacement.size());
    q.values.resize(6 + n + m2);
    q.values.segment<3>(0) = rotation_to_vector(s.rotation);
    q.values.segment<3>(3) = s.translation;
    q.values.segment(6, n) = s.expression;
    q.values.segment(6 + n, m2) = s.displacement;
    return q;
}

ShapeParams unflatten_shape(const ShapeVector& q, int n, int m, const Eigen::VectorXd& identity,
                            double focal) {
    if (q.values.size() != ShapeVector::length(n, m)) {
        throw std::invalid_argument("unflatten_shape: length mismatch");
    }
    ShapeParams s;
    s.rotation = rotation_from_vector(q.values.segment<3>(0));
    s.translation = q.values.segment<3>(3);
    s.expression = q.values.segment(6, n);
    s.displacement = q.values.segment(6 + n, 2 * m);
    s.identity = identity;
    s.focal = focal;
    return s;
}

void evaluate_rig(const Eigen::VectorXd& u, const FaceRig& rig, Eigen::VectorXd& b0,
                  Eigen::MatrixXd& B) {
    if (u.size() != rig.identity_count()) throw std::invalid_argument("evaluate_rig: |u| != n_id");
    const int rows = 3 * rig.vertex_count();
    const int n = rig.expression_count();
    const int nid = rig.identity_count();
    b0.resize(rows);
    B.resize(rows, n);
    for (int r = 0; r < rows; ++r) {
        for (int e = 0; e <= n; ++e) {
            double acc = rig.core(r, e, 0);
            for (int j = 0; j < nid; ++j) acc += u[j] * rig.core(r, e, j + 1);
            if (e == 0) {
                b0[r] = acc;
            } else {
                B(r, e - 1) = acc;
            }
        }
    }
}

Eigen::VectorXd shape_vertices(const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                               const FaceRig& rig, bool clamp_expression) {
    if (x.size() != rig.expression_count()) throw std::invalid_argument("shape_vertices: |x| != n");
    Eigen::VectorXd xe = x;
    for (int k = 0; k < xe.size(); ++k) {
        if (xe[k] < 0.0 || xe[k] > 1.0) {
            if (!clamp_expression) {
                throw std::domain_error("expression coefficient " + std::to_string(k) +
                                        " outside [0,1]: " + std::to_string(xe[k]));
            }
            log_warn("clamping expression coefficient " + std::to_string(k));
            xe[k] = std::clamp(xe[k], 0.0, 1.0);
        }
    }
    Eigen::VectorXd b0;
    Eigen::MatrixXd B;
    evaluate_rig(u, rig, b0, B);
    return b0 + B * xe;
}

LandmarkBasis landmark_basis(const FaceRig& rig, const Eigen::VectorXd& u) {
    if (u.size() != rig.identity_count()) throw std::invalid_argument("landmark_basis: |u| != n_id");
    const int rows = 3 * rig.landmark_count();
    const int n = rig.expression_count();
    const int nid = rig.identity_count();
    LandmarkBasis out;
    out.b0.resize(rows);
    out.B.resize(rows, n);
    for (int r = 0; r < rows; ++r) {
        for (int e = 0; e <= n; ++e) {
            double acc = rig.lm_core(r, e, 0);
            for (int j = 0; j < nid; ++j) acc += u[j] * rig.lm_core(r, e, j + 1);
            if (e == 0) {
                out.b0[r] = acc;
            } else {
                out.B(r, e - 1) = acc;
            }
        }
    }
    return out;
}

namespace {

inline Eigen::Vector2d pinhole(const Eigen::Vector3d& cam, double f, const Eigen::Vector2d& c,
                               int landmark_for_error) {
    if (cam.z() <= kProjectionZGuard) throw ProjectionError(landmark_for_error, cam.z());
    return {f * cam.x() / cam.z() + c.x(), f * cam.y() / cam.z() + c.y()};
}

} // namespace

Landmarks2D project_landmarks(const LandmarkBasis& basis, const Eigen::Quaterniond& R,
                              const Eigen::Vector3d& t, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& displacement, double focal,
                              const Eigen::Vector2d& principal) {
    if (focal <= 0) throw std::invalid_argument("project_landmarks: focal must be positive");
    const int m = static_cast<int>(basis.b0.size()) / 3;
    const Eigen::VectorXd verts = basis.b0 + basis.B * x;
    const Eigen::Matrix3d rot = R.normalized().toRotationMatrix();
    Landmarks2D out(m);
    for (int i = 0; i < m; ++i) {
        const Eigen::Vector3d cam = rot * verts.segment<3>(3 * i) + t;
        out[i] = pinhole(cam, focal, principal, i) +
                 Eigen::Vector2d(displacement[2 * i], displacement[2 * i + 1]);
    }
    return out;
}

Landmarks2D project_landmarks(const ShapeParams& s, const FaceRig& rig,
                              const Eigen::Vector2d& principal) {
    return project_landmarks(landmark_basis(rig, s.identity), s.rotation, s.translation,
                             s.expression, s.displacement, s.focal, principal);
}

RectF project_bbox(const ShapeParams& s, const FaceRig& rig, const Eigen::Vector2d& principal,
                   double margin) {
    const Eigen::VectorXd verts = shape_vertices(s.identity, s.expression, rig, true);
    const Eigen::Matrix3d rot = s.rotation.normalized().toRotationMatrix();
    RectF box{1e30, 1e30, -1e30, -1e30};
    for (int v = 0; v < rig.vertex_count(); ++v) {
        const Eigen::Vector3d cam = rot * verts.segment<3>(3 * v) + s.translation;
        const Eigen::Vector2d p = pinhole(cam, s.focal, principal, v);
        box.x0 = std::min(box.x0, p.x());
        box.y0 = std::min(box.y0, p.y());
        box.x1 = std::max(box.x1, p.x());
        box.y1 = std::max(box.y1, p.y());
    }
    return expand_rect(box, margin);
}

LandmarkJacobians landmark_jacobians(const ShapeParams& s, const FaceRig& rig,
                                     const Eigen::Vector2d& principal) {
    const int m = rig.landmark_count();
    const int n = rig.expression_count();
    const int nid = rig.identity_count();
    const LandmarkBasis basis = landmark_basis(rig, s.identity);
    const Eigen::VectorXd verts = basis.b0 + basis.B * s.expression;
    const Eigen::Matrix3d rot = s.rotation.normalized().toRotationMatrix();

    // d v_i / d u_j with x held fixed: contraction of the landmark tensor
    // slice j with [1; x].
    Eigen::MatrixXd dvert_du(3 * m, nid);
    for (int r = 0; r < 3 * m; ++r) {
        for (int j = 0; j < nid; ++j) {
            double acc = rig.lm_core(r, 0, j + 1);
            for (int e = 1; e <= n; ++e) acc += s.expression[e - 1] * rig.lm_core(r, e, j + 1);
            dvert_du(r, j) = acc;
        }
    }

    LandmarkJacobians jac;
    jac.d_rot.resize(2 * m, 3);
    jac.d_trans.resize(2 * m, 3);
    jac.d_expr.resize(2 * m, n);
    jac.d_ident.resize(2 * m, nid);
    jac.d_focal.resize(2 * m);

    for (int i = 0; i < m; ++i) {
        const Eigen::Vector3d rv = rot * verts.segment<3>(3 * i);
        const Eigen::Vector3d cam = rv + s.translation;
        if (cam.z() <= kProjectionZGuard) throw ProjectionError(i, cam.z());
        const double inv_z = 1.0 / cam.z();
        Eigen::Matrix<double, 2, 3> dpix; // d(pixel)/d(camera point)
        dpix << s.focal * inv_z, 0, -s.focal * cam.x() * inv_z * inv_z, 0, s.focal * inv_z,
            -s.focal * cam.y() * inv_z * inv_z;

        jac.d_rot.block<2, 3>(2 * i, 0) = dpix * (-skew(rv));
        jac.d_trans.block<2, 3>(2 * i, 0) = dpix;
        jac.d_expr.block(2 * i, 0, 2, n) = dpix * rot * basis.B.block(3 * i, 0, 3, n);
        jac.d_ident.block(2 * i, 0, 2, nid) = dpix * rot * dvert_du.block(3 * i, 0, 3, nid);
        jac.d_focal[2 * i] = cam.x() * inv_z;
        jac.d_focal[2 * i + 1] = cam.y() * inv_z;
    }
    return jac;
}

double interocular_distance(const Landmarks2D& p) {
    if (p.size() < 2) throw std::invalid_argument("interocular_distance: need >= 2 landmarks");
    return (p[0] - p[1]).norm();
}

// --- rig container -----------------------------------------------------------

namespace {
constexpr char kRigMagic[4] = {'F', 'C', 'R', 'G'};
constexpr uint32_t kRigVersion = 1;
} // namespace

void save_rig(const std::string& path, const FaceRig& rig) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write rig: " + path);
    f.write(kRigMagic, 4);
    binio::write_u32(f, kRigVersion);
    binio::write_u32(f, static_cast<uint32_t>(rig.vertex_count()));
    binio::write_u32(f, static_cast<uint32_t>(rig.expression_count()));
    binio::write_u32(f, static_cast<uint32_t>(rig.identity_count()));
    binio::write_u32(f, static_cast<uint32_t>(rig.landmark_count()));
    binio::write_f32_array(f, rig.core_tensor().data(), rig.core_tensor().size());
    for (int i = 0; i < rig.landmark_count(); ++i) {
        binio::write_f32(f, static_cast<float>(rig.mean_landmarks()(i, 0)));
        binio::write_f32(f, static_cast<float>(rig.mean_landmarks()(i, 1)));
    }
    for (int idx : rig.landmark_indices()) binio::write_u32(f, static_cast<uint32_t>(idx));
}

FaceRig load_rig(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open rig: " + path);
    binio::expect_magic(f, kRigMagic, "rig file");
    const uint32_t version = binio::read_u32(f);
    if (version != kRigVersion) throw std::runtime_error("unsupported rig version");
    const int V = static_cast<int>(binio::read_u32(f));
    const int n = static_cast<int>(binio::read_u32(f));
    const int nid = static_cast<int>(binio::read_u32(f));
    const int m = static_cast<int>(binio::read_u32(f));
    std::vector<double> core(static_cast<size_t>(3 * V) * (n + 1) * (nid + 1));
    binio::read_f32_array(f, core.data(), core.size());
    Eigen::MatrixX2d lms(m, 2);
    for (int i = 0; i < m; ++i) {
        lms(i, 0) = binio::read_f32(f);
        lms(i, 1) = binio::read_f32(f);
    }
    std::vector<int> indices(m);
    for (int i = 0; i < m; ++i) indices[i] = static_cast<int>(binio::read_u32(f));
    return FaceRig(V, n, nid, m, std::move(core), std::move(lms), std::move(indices));
}

// --- procedural toy rigs -------------------------------------------------------

namespace {

// Smooth bump displacement field over the mesh, direction-blended between the
// surface normal and a random tangent.
Eigen::VectorXd bump_field(const std::vector<Eigen::Vector3d>& verts, Rng& rng, double radius_lo,
                           double radius_hi) {
    const int V = static_cast<int>(verts.size());
    const Eigen::Vector3d center = verts[static_cast<size_t>(rng.uniform_int(0, V - 1))];
    const double radius = rng.uniform(radius_lo, radius_hi);
    Eigen::Vector3d dir(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    dir.normalize();
    Eigen::VectorXd field(3 * V);
    for (int v = 0; v < V; ++v) {
        const double w = std::exp(-(verts[v] - center).squaredNorm() / (radius * radius));
        const Eigen::Vector3d normal = verts[v].normalized();
        field.segment<3>(3 * v) = w * (0.6 * normal + 0.4 * dir);
    }
    return field;
}

} // namespace

ToyRig make_toy_rig(const ToyRigParams& p) {
    if (p.rings < 3 || p.sectors < 4) throw std::invalid_argument("make_toy_rig: mesh too coarse");
    Rng rng(p.seed);

    // Ellipsoid head; camera convention: +z away from camera, so the face
    // front is the z < 0 hemisphere.
    const Eigen::Vector3d radii(0.55, 0.70, 0.50);
    std::vector<Eigen::Vector3d> verts;
    verts.reserve(static_cast<size_t>(p.rings) * p.sectors + 2);
    verts.emplace_back(0, radii.y(), 0); // top pole
    for (int r = 0; r < p.rings; ++r) {
        const double theta = M_PI * (r + 1) / (p.rings + 1); // from +y axis
        for (int c = 0; c < p.sectors; ++c) {
            const double phi = 2 * M_PI * c / p.sectors;
            // phi = 0 faces the camera (-z)
            verts.emplace_back(radii.x() * std::sin(theta) * std::sin(phi),
                               radii.y() * std::cos(theta),
                               -radii.z() * std::sin(theta) * std::cos(phi));
        }
    }
    verts.emplace_back(0, -radii.y(), 0); // bottom pole
    const int V = static_cast<int>(verts.size());

    std::vector<std::array<int, 3>> tris;
    const auto ring_vertex = [&](int r, int c) { return 1 + r * p.sectors + (c % p.sectors); };
    for (int c = 0; c < p.sectors; ++c) {
        tris.push_back({0, ring_vertex(0, c), ring_vertex(0, c + 1)});
    }
    for (int r = 0; r + 1 < p.rings; ++r) {
        for (int c = 0; c < p.sectors; ++c) {
            const int a = ring_vertex(r, c), b = ring_vertex(r, c + 1);
            const int d = ring_vertex(r + 1, c), e = ring_vertex(r + 1, c + 1);
            tris.push_back({a, d, b});
            tris.push_back({b, d, e});
        }
    }
    for (int c = 0; c < p.sectors; ++c) {
        tris.push_back({V - 1, ring_vertex(p.rings - 1, c + 1), ring_vertex(p.rings - 1, c)});
    }

    // Landmarks live on the front hemisphere; 0 and 1 are the widest pair
    // (outer eye-corner proxies).
    std::vector<int> front;
    for (int v = 0; v < V; ++v) {
        if (verts[v].z() < -0.05 * radii.z()) front.push_back(v);
    }
    if (static_cast<int>(front.size()) < p.landmarks) {
        throw std::invalid_argument("make_toy_rig: not enough front vertices for landmarks");
    }
    int left = front[0], right = front[0];
    for (int v : front) {
        if (verts[v].x() < verts[left].x()) left = v;
        if (verts[v].x() > verts[right].x()) right = v;
    }
    std::vector<int> landmark_ids = {left, right};
    std::vector<int> rest;
    for (int v : front) {
        if (v != left && v != right) rest.push_back(v);
    }
    for (int i = 0; i < p.landmarks - 2; ++i) {
        const size_t pick = rest.size() * static_cast<size_t>(i) / (p.landmarks - 2);
        landmark_ids.push_back(rest[pick]);
    }
    // Evenly strided picks can collide at the tail; rotate duplicates out.
    std::sort(landmark_ids.begin() + 2, landmark_ids.end());
    for (size_t i = 3; i < landmark_ids.size(); ++i) {
        if (landmark_ids[i] == landmark_ids[i - 1]) {
            for (int v : rest) {
                if (std::find(landmark_ids.begin(), landmark_ids.end(), v) == landmark_ids.end()) {
                    landmark_ids[i] = v;
                    break;
                }
            }
        }
    }

    // Core tensor with affine origin slices.
    const int n = p.expressions, nid = p.identities;
    const int stride = (n + 1) * (nid + 1);
    std::vector<double> core(static_cast<size_t>(3 * V) * stride, 0.0);
    const auto slot = [&](int row, int e, int j) -> double& {
        return core[(static_cast<size_t>(row) * (n + 1) + e) * (nid + 1) + j];
    };
    for (int v = 0; v < V; ++v) {
        for (int a = 0; a < 3; ++a) slot(3 * v + a, 0, 0) = verts[v][a];
    }
    for (int e = 1; e <= n; ++e) {
        Rng sub = rng.derive(1000 + e);
        Eigen::VectorXd field = bump_field(verts, sub, 0.25, 0.6);
        field *= p.expression_scale / std::max(1e-12, std::sqrt(field.squaredNorm() / V));
        for (int r = 0; r < 3 * V; ++r) slot(r, e, 0) = field[r];
    }
    for (int j = 1; j <= nid; ++j) {
        Rng sub = rng.derive(2000 + j);
        Eigen::Matrix3d A;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) A(a, b) = sub.normal(0, 0.4);
        }
        Eigen::VectorXd field(3 * V);
        const Eigen::VectorXd bump = bump_field(verts, sub, 0.4, 0.9);
        for (int v = 0; v < V; ++v) {
            field.segment<3>(3 * v) = A * verts[v] + 0.5 * bump.segment<3>(3 * v);
        }
        field *= p.identity_scale / std::max(1e-12, std::sqrt(field.squaredNorm() / V));
        for (int r = 0; r < 3 * V; ++r) slot(r, 0, j) = field[r];
        // Mild identity-expression coupling keeps the tensor genuinely rank-3.
        for (int e = 1; e <= n; ++e) {
            Rng csub = rng.derive(3000 + j * 97 + e);
            Eigen::VectorXd cfield = bump_field(verts, csub, 0.3, 0.7);
            cfield *= 0.15 * p.identity_scale /
                      std::max(1e-12, std::sqrt(cfield.squaredNorm() / V));
            for (int r = 0; r < 3 * V; ++r) slot(r, e, j) = cfield[r];
        }
    }

    // Mean landmarks: canonical-pose projection normalized to the unit square.
    const double canonical_f = 270.0, canonical_tz = 3.0, crop = 128.0;
    Eigen::MatrixX2d mean_lms(p.landmarks, 2);
    for (int i = 0; i < p.landmarks; ++i) {
        const Eigen::Vector3d v = verts[landmark_ids[i]] + Eigen::Vector3d(0, 0, canonical_tz);
        mean_lms(i, 0) = (canonical_f * v.x() / v.z() + crop / 2) / crop;
        mean_lms(i, 1) = (canonical_f * v.y() / v.z() + crop / 2) / crop;
    }

    ToyRig out{FaceRig(V, n, nid, p.landmarks, std::move(core), std::move(mean_lms),
                       std::move(landmark_ids)),
               std::move(tris)};
    return out;
}

} // namespace facecap
