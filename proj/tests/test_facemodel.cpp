#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "facecap/facemodel/facemodel.hpp"
#include "test_util.hpp"

using namespace facecap;

namespace {

// Independent naive contraction: plain triple loop over the raw tensor.
void naive_contraction(const FaceRig& rig, const Eigen::VectorXd& u, std::vector<double>& b0,
                       std::vector<std::vector<double>>& B) {
    const int rows = 3 * rig.vertex_count();
    b0.assign(rows, 0.0);
    B.assign(rows, std::vector<double>(rig.expression_count(), 0.0));
    for (int r = 0; r < rows; ++r) {
        for (int e = 0; e <= rig.expression_count(); ++e) {
            double acc = 0;
            for (int j = 0; j <= rig.identity_count(); ++j) {
                const double coeff = j == 0 ? 1.0 : u[j - 1];
                acc += coeff * rig.core(r, e, j);
            }
            if (e == 0) {
                b0[r] = acc;
            } else {
                B[r][e - 1] = acc;
            }
        }
    }
}

// Scalar reimplementation of the landmark equation: quaternion rotation by
// the sandwich formula, pinhole by hand.
Eigen::Vector2d scalar_landmark(const FaceRig& rig, const ShapeParams& s, int i, double cx,
                                double cy) {
    std::vector<double> b0;
    std::vector<std::vector<double>> B;
    naive_contraction(rig, s.identity, b0, B);
    const int v = rig.landmark_indices()[i];
    double vert[3];
    for (int a = 0; a < 3; ++a) {
        vert[a] = b0[3 * v + a];
        for (int e = 0; e < rig.expression_count(); ++e) vert[a] += B[3 * v + a][e] * s.expression[e];
    }
    const double qw = s.rotation.w(), qx = s.rotation.x(), qy = s.rotation.y(), qz = s.rotation.z();
    // v' = v + 2 q_vec x (q_vec x v + w v)
    const double tx = 2 * (qy * vert[2] - qz * vert[1]);
    const double ty = 2 * (qz * vert[0] - qx * vert[2]);
    const double tz = 2 * (qx * vert[1] - qy * vert[0]);
    const double rx = vert[0] + qw * tx + (qy * tz - qz * ty);
    const double ry = vert[1] + qw * ty + (qz * tx - qx * tz);
    const double rz = vert[2] + qw * tz + (qx * ty - qy * tx);
    const double X = rx + s.translation.x();
    const double Y = ry + s.translation.y();
    const double Z = rz + s.translation.z();
    return {s.focal * X / Z + cx + s.displacement[2 * i],
            s.focal * Y / Z + cy + s.displacement[2 * i + 1]};
}

} // namespace

TEST_CASE("evaluate_rig at the identity origin") {
    const FaceRig rig = test::make_random_rig(10, 2, 3, 5, 42);
    Eigen::VectorXd b0;
    Eigen::MatrixXd B;
    evaluate_rig(Eigen::VectorXd::Zero(3), rig, b0, B);
    for (int r = 0; r < 30; ++r) {
        CHECK(b0[r] == doctest::Approx(rig.core(r, 0, 0)).epsilon(1e-15));
        for (int e = 1; e <= 2; ++e) CHECK(B(r, e - 1) == doctest::Approx(rig.core(r, e, 0)));
    }
}

TEST_CASE("evaluate_rig along the first identity basis") {
    const FaceRig rig = test::make_random_rig(10, 2, 3, 5, 43);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(3);
    u[0] = 1.0;
    Eigen::VectorXd b0;
    Eigen::MatrixXd B;
    evaluate_rig(u, rig, b0, B);
    for (int r = 0; r < 30; ++r) {
        CHECK(b0[r] == doctest::Approx(rig.core(r, 0, 0) + rig.core(r, 0, 1)).epsilon(1e-15));
    }
}

TEST_CASE("evaluate_rig matches the naive triple-loop contraction") {
    const FaceRig rig = test::make_random_rig(10, 2, 3, 5, 44);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd u(3);
        for (int j = 0; j < 3; ++j) u[j] = rng.uniform(-2, 2);
        Eigen::VectorXd b0;
        Eigen::MatrixXd B;
        evaluate_rig(u, rig, b0, B);
        std::vector<double> nb0;
        std::vector<std::vector<double>> nB;
        naive_contraction(rig, u, nb0, nB);
        for (int r = 0; r < 30; ++r) {
            CHECK(b0[r] == doctest::Approx(nb0[r]).epsilon(1e-13));
            for (int e = 0; e < 2; ++e) CHECK(B(r, e) == doctest::Approx(nB[r][e]).epsilon(1e-13));
        }
    }
    CHECK_THROWS(evaluate_rig(Eigen::VectorXd::Zero(4), rig, *(new Eigen::VectorXd),
                              *(new Eigen::MatrixXd)));
}

TEST_CASE("shape_vertices neutral, single basis, linearity") {
    const FaceRig rig = test::make_random_rig(10, 2, 3, 5, 45);
    const Eigen::VectorXd u = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd b0;
    Eigen::MatrixXd B;
    evaluate_rig(u, rig, b0, B);

    const Eigen::VectorXd neutral = shape_vertices(u, Eigen::VectorXd::Zero(2), rig);
    CHECK((neutral - b0).lpNorm<Eigen::Infinity>() < 1e-14);

    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(2);
    e1[1] = 1.0;
    const Eigen::VectorXd deformed = shape_vertices(u, e1, rig);
    CHECK((deformed - (b0 + B.col(1))).lpNorm<Eigen::Infinity>() < 1e-14);

    Eigen::VectorXd x1(2), x2(2);
    x1 << 0.2, 0.8;
    x2 << 0.6, 0.4;
    const Eigen::VectorXd mid = shape_vertices(u, ((x1 + x2) / 2).eval(), rig);
    const Eigen::VectorXd avg =
        (shape_vertices(u, x1, rig) + shape_vertices(u, x2, rig)) / 2;
    CHECK((mid - avg).lpNorm<Eigen::Infinity>() < 1e-13);

    Eigen::VectorXd bad(2);
    bad << 1.5, 0.0;
    CHECK_THROWS_AS(shape_vertices(u, bad, rig), std::domain_error);
    log_warnings_enabled() = false;
    CHECK_NOTHROW(shape_vertices(u, bad, rig, true));
    log_warnings_enabled() = true;
}

TEST_CASE("project_landmarks pinhole spot value") {
    // Single vertex at (0.1, 0, 0), R = I, t = (0,0,1), f = 500, c = (64,64).
    std::vector<double> core(3 * 1 * 1 * 1, 0.0);
    core[0] = 0.1;
    Eigen::MatrixX2d lms(1, 2);
    lms << 0.5, 0.5;
    const FaceRig rig(1, 0, 0, 1, core, lms, {0});
    ShapeParams s = ShapeParams::neutral(rig);
    s.translation = Eigen::Vector3d(0, 0, 1);
    s.focal = 500;
    const Landmarks2D p = project_landmarks(s, rig, {64, 64});
    CHECK(p[0].x() == doctest::Approx(114.0).epsilon(1e-12));
    CHECK(p[0].y() == doctest::Approx(64.0).epsilon(1e-12));

    // Doubling f doubles (p - c).
    s.focal = 1000;
    const Landmarks2D p2 = project_landmarks(s, rig, {64, 64});
    CHECK(p2[0].x() - 64 == doctest::Approx(2 * (p[0].x() - 64)));

    // Behind-camera error names the landmark.
    s.translation = Eigen::Vector3d(0, 0, -1);
    CHECK_THROWS_AS(project_landmarks(s, rig, {64, 64}), ProjectionError);
    try {
        project_landmarks(s, rig, {64, 64});
    } catch (const ProjectionError& e) {
        CHECK(e.landmark_index == 0);
    }
}

TEST_CASE("project_landmarks matches the scalar oracle") {
    const FaceRig rig = test::make_random_rig(10, 2, 3, 5, 46);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const ShapeParams s = test::random_state(rig, rng);
        Landmarks2D p;
        try {
            p = project_landmarks(s, rig, {64, 64});
        } catch (const ProjectionError&) {
            continue;
        }
        for (int i = 0; i < rig.landmark_count(); ++i) {
            const Eigen::Vector2d q = scalar_landmark(rig, s, i, 64, 64);
            CHECK((p[i] - q).norm() < 1e-9);
        }
    }
}

TEST_CASE("displacement offsets are additive post-projection") {
    const FaceRig rig = test::make_random_rig(12, 3, 2, 6, 47);
    Rng rng(12);
    ShapeParams s = test::random_state(rig, rng);
    s.displacement.setZero();
    const Landmarks2D base = project_landmarks(s, rig, {64, 64});
    for (int i = 0; i < s.displacement.size(); ++i) s.displacement[i] = rng.uniform(-3, 3);
    const Landmarks2D shifted = project_landmarks(s, rig, {64, 64});
    for (int i = 0; i < rig.landmark_count(); ++i) {
        CHECK(shifted[i].x() - base[i].x() == doctest::Approx(s.displacement[2 * i]).epsilon(1e-12));
        CHECK(shifted[i].y() - base[i].y() ==
              doctest::Approx(s.displacement[2 * i + 1]).epsilon(1e-12));
    }
}

TEST_CASE("landmarks invariant under quaternion sign flip") {
    const FaceRig rig = test::make_random_rig(12, 3, 2, 6, 48);
    Rng rng(13);
    ShapeParams s = test::random_state(rig, rng);
    const Landmarks2D a = project_landmarks(s, rig, {64, 64});
    s.rotation.coeffs() = -s.rotation.coeffs();
    const Landmarks2D b = project_landmarks(s, rig, {64, 64});
    for (size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() < 1e-12);
}

TEST_CASE("project_bbox margin and containment") {
    const RectF tight{10, 20, 110, 120}; // 100 x 100
    const RectF grown = expand_rect(tight, 0.2);
    CHECK(grown.width() == doctest::Approx(120));
    CHECK(grown.height() == doctest::Approx(120));
    CHECK(grown.cx() == doctest::Approx(tight.cx()));
    CHECK(grown.cy() == doctest::Approx(tight.cy()));

    // Degenerate single-vertex rig: zero margin collapses to one point.
    std::vector<double> core(3, 0.0);
    Eigen::MatrixX2d lms(1, 2);
    lms << 0.5, 0.5;
    const FaceRig point_rig(1, 0, 0, 1, core, lms, {0});
    ShapeParams sp = ShapeParams::neutral(point_rig);
    sp.translation = Eigen::Vector3d(0, 0, 2);
    sp.focal = 100;
    const RectF r = project_bbox(sp, point_rig, {50, 50}, 0.0);
    CHECK(r.x0 == doctest::Approx(50));
    CHECK(r.x1 == doctest::Approx(50));

    // Random toy-rig poses: box contains every projected landmark.
    const ToyRig toy = make_toy_rig({});
    Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        ShapeParams s = test::random_state(toy.rig, rng, 0.3);
        s.displacement.setZero();
        Landmarks2D p;
        try {
            p = project_landmarks(s, toy.rig, {64, 64});
        } catch (const ProjectionError&) {
            continue;
        }
        const RectF box = project_bbox(s, toy.rig, {64, 64}, 0.2);
        for (const auto& pt : p) CHECK(box.contains(pt.x(), pt.y()));
    }
}

TEST_CASE("analytic landmark Jacobians match central differences") {
    const ToyRig toy = make_toy_rig({.rings = 6, .sectors = 8, .expressions = 4, .identities = 3,
                                     .landmarks = 12, .seed = 3});
    const FaceRig& rig = toy.rig;
    Rng rng(15);
    const double h = 1e-6;
    double max_rel = 0;
    int tested = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const ShapeParams s = test::random_state(rig, rng, 0.3);
        LandmarkJacobians jac;
        Landmarks2D base;
        try {
            jac = landmark_jacobians(s, rig, {64, 64});
            base = project_landmarks(s, rig, {64, 64});
        } catch (const ProjectionError&) {
            continue;
        }
        ++tested;
        const auto flatten = [&](const Landmarks2D& p) {
            Eigen::VectorXd v(2 * p.size());
            for (size_t i = 0; i < p.size(); ++i) {
                v[2 * i] = p[i].x();
                v[2 * i + 1] = p[i].y();
            }
            return v;
        };
        const auto check_col = [&](const Eigen::VectorXd& analytic, const Landmarks2D& plus,
                                   const Landmarks2D& minus) {
            const Eigen::VectorXd fd = (flatten(plus) - flatten(minus)) / (2 * h);
            const double denom = std::max({analytic.norm(), fd.norm(), 1e-8});
            max_rel = std::max(max_rel, (analytic - fd).norm() / denom);
        };

        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d dw = Eigen::Vector3d::Zero();
            dw[k] = h;
            ShapeParams sp = s, sm = s;
            sp.rotation = rotation_from_vector(dw) * s.rotation;
            sm.rotation = rotation_from_vector(-dw) * s.rotation;
            check_col(jac.d_rot.col(k), project_landmarks(sp, rig, {64, 64}),
                      project_landmarks(sm, rig, {64, 64}));
        }
        for (int k = 0; k < 3; ++k) {
            ShapeParams sp = s, sm = s;
            sp.translation[k] += h;
            sm.translation[k] -= h;
            check_col(jac.d_trans.col(k), project_landmarks(sp, rig, {64, 64}),
                      project_landmarks(sm, rig, {64, 64}));
        }
        for (int k = 0; k < rig.expression_count(); ++k) {
            ShapeParams sp = s, sm = s;
            sp.expression[k] += h;
            sm.expression[k] -= h;
            LandmarkBasis basis = landmark_basis(rig, s.identity);
            check_col(jac.d_expr.col(k),
                      project_landmarks(basis, sp.rotation, sp.translation, sp.expression,
                                        sp.displacement, sp.focal, {64, 64}),
                      project_landmarks(basis, sm.rotation, sm.translation, sm.expression,
                                        sm.displacement, sm.focal, {64, 64}));
        }
        for (int k = 0; k < rig.identity_count(); ++k) {
            ShapeParams sp = s, sm = s;
            sp.identity[k] += h;
            sm.identity[k] -= h;
            check_col(jac.d_ident.col(k), project_landmarks(sp, rig, {64, 64}),
                      project_landmarks(sm, rig, {64, 64}));
        }
        {
            ShapeParams sp = s, sm = s;
            sp.focal += h;
            sm.focal -= h;
            check_col(jac.d_focal, project_landmarks(sp, rig, {64, 64}),
                      project_landmarks(sm, rig, {64, 64}));
        }
    }
    CHECK(tested >= 90);
    CHECK(max_rel < 1e-4);
}

TEST_CASE("shape vector round trip") {
    const FaceRig rig = test::make_random_rig(10, 4, 3, 6, 49);
    Rng rng(16);
    const ShapeParams s = test::random_state(rig, rng);
    const ShapeVector q = flatten_shape(s);
    CHECK(q.values.size() == ShapeVector::length(4, 6));
    const ShapeParams back = unflatten_shape(q, 4, 6, s.identity, s.focal);
    CHECK(rotation_geodesic(back.rotation, s.rotation) < 1e-12);
    CHECK((back.translation - s.translation).norm() < 1e-14);
    CHECK((back.expression - s.expression).norm() < 1e-14);
    CHECK((back.displacement - s.displacement).norm() < 1e-14);
}

TEST_CASE("rig container round trip") {
    const ToyRig toy = make_toy_rig({.rings = 5, .sectors = 8, .expressions = 3, .identities = 2,
                                     .landmarks = 10, .seed = 9});
    const std::string path = (std::filesystem::temp_directory_path() / "facecap_test_rig.bin").string();
    save_rig(path, toy.rig);
    const FaceRig loaded = load_rig(path);
    CHECK(loaded.vertex_count() == toy.rig.vertex_count());
    CHECK(loaded.expression_count() == toy.rig.expression_count());
    CHECK(loaded.identity_count() == toy.rig.identity_count());
    CHECK(loaded.landmark_count() == toy.rig.landmark_count());
    CHECK(loaded.landmark_indices() == toy.rig.landmark_indices());
    // float32 container: values agree to single precision
    for (size_t i = 0; i < loaded.core_tensor().size(); i += 37) {
        CHECK(loaded.core_tensor()[i] ==
              doctest::Approx(toy.rig.core_tensor()[i]).epsilon(1e-6));
    }
    std::filesystem::remove(path);
}

TEST_CASE("toy rig respects requested dimensions and default invariants") {
    const ToyRig toy = make_toy_rig({});
    CHECK(toy.rig.landmark_count() == 73);
    CHECK(toy.rig.expression_count() == 12);
    for (int idx : toy.rig.landmark_indices()) CHECK(idx < toy.rig.vertex_count());
    // Mean landmarks inside the unit square.
    for (int i = 0; i < toy.rig.landmark_count(); ++i) {
        CHECK(toy.rig.mean_landmarks()(i, 0) > 0.0);
        CHECK(toy.rig.mean_landmarks()(i, 0) < 1.0);
        CHECK(toy.rig.mean_landmarks()(i, 1) > 0.0);
        CHECK(toy.rig.mean_landmarks()(i, 1) < 1.0);
    }
    // Landmark ids must be distinct.
    auto ids = toy.rig.landmark_indices();
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}
