#ifndef FACECAP_COMMON_GEOMETRY_HPP
#define FACECAP_COMMON_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>

namespace facecap {

struct RectF {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0; // inclusive corners

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

    bool contains(double x, double y) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    }
};

// Grow each dimension by `margin` (fraction of that dimension), same center.
inline RectF expand_rect(const RectF& r, double margin) {
    const double dx = 0.5 * margin * r.width();
    const double dy = 0.5 * margin * r.height();
    return {r.x0 - dx, r.y0 - dy, r.x1 + dx, r.y1 + dy};
}

inline RectF clamp_rect(const RectF& r, double w, double h) {
    return {std::clamp(r.x0, 0.0, w - 1), std::clamp(r.y0, 0.0, h - 1),
            std::clamp(r.x1, 0.0, w - 1), std::clamp(r.y1, 0.0, h - 1)};
}

// Rotation helpers: unit quaternions externally, 3-DoF rotation vectors in
// solver/regression parameter space. Canonical angle in [0, pi].
inline Eigen::Vector3d rotation_to_vector(const Eigen::Quaterniond& q_in) {
    Eigen::Quaterniond q = q_in.normalized();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    const Eigen::AngleAxisd aa(q);
    return aa.angle() * aa.axis();
}

inline Eigen::Quaterniond rotation_from_vector(const Eigen::Vector3d& w) {
    const double angle = w.norm();
    if (angle < 1e-14) {
        Eigen::Quaterniond q(1, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
        return q.normalized();
    }
    return Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle));
}

// Geodesic distance between rotations, radians.
inline double rotation_geodesic(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
    const double d = std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0);
    return 2.0 * std::acos(d);
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

} // namespace facecap

#endif
