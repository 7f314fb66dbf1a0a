#pragma once

#include <array>
#include <cmath>

#include "qdyn/errors.hpp"

// Unit-quaternion algebra, Hamilton convention, storage order (w,x,y,z).
// q maps body-frame vectors to the world frame via rotate().

namespace qdyn {

struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    double vec_norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double dot(const Quat& a, const Quat& b) {
    return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Build a unit quaternion from a raw 4-vector. Degenerate input is an error.
inline Quat normalized(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n <= 1e-8)
        throw Error("quaternion: cannot normalize near-zero 4-vector (norm " +
                    std::to_string(n) + ")");
    return {w / n, x / n, y / n, z / n};
}

inline Quat normalized(const Quat& q) { return normalized(q.w, q.x, q.y, q.z); }

/// Resolve the double cover: flip sign so the scalar part is nonnegative.
inline Quat canonicalized(const Quat& q) {
    if (q.w < 0.0) return {-q.w, -q.x, -q.y, -q.z};
    return q;
}

inline Quat conjugate(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }

/// Inverse of a unit quaternion (the conjugate).
inline Quat inverse(const Quat& q) { return conjugate(q); }

/// Rotation composition: R(hamilton(a,b)) == R(a)·R(b). Renormalized.
inline Quat hamilton(const Quat& a, const Quat& b) {
    Quat c{a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
           a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
           a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
           a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
    return normalized(c);
}

inline std::array<double, 3> rotate(const Quat& q, const std::array<double, 3>& v) {
    // v' = v + 2 u x (u x v + w v), u = (x,y,z)
    const double ux = q.y * v[2] - q.z * v[1] + q.w * v[0];
    const double uy = q.z * v[0] - q.x * v[2] + q.w * v[1];
    const double uz = q.x * v[1] - q.y * v[0] + q.w * v[2];
    return {v[0] + 2.0 * (q.y * uz - q.z * uy),
            v[1] + 2.0 * (q.z * ux - q.x * uz),
            v[2] + 2.0 * (q.x * uy - q.y * ux)};
}

/// Row-major 3x3 rotation matrix of a unit quaternion.
inline std::array<double, 9> to_matrix(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

inline Quat from_axis_angle(const std::array<double, 3>& axis, double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n <= 1e-12) return Quat::identity();
    const double h = 0.5 * angle;
    const double s = std::sin(h) / n;
    return {std::cos(h), axis[0] * s, axis[1] * s, axis[2] * s};
}

/// Geodesic attitude error: the quaternion-log angle of the rotation taking
/// q_pred to q_gt, canonicalized to the double cover. In [0, pi/2], radians.
/// Note this is half the geometric rotation angle between the two attitudes.
inline double quat_error_angle(const Quat& q_gt, const Quat& q_pred) {
    // same attitude up to the quaternion sign: exactly zero, no product noise
    if ((q_gt.w == q_pred.w && q_gt.x == q_pred.x && q_gt.y == q_pred.y &&
         q_gt.z == q_pred.z) ||
        (q_gt.w == -q_pred.w && q_gt.x == -q_pred.x && q_gt.y == -q_pred.y &&
         q_gt.z == -q_pred.z))
        return 0.0;
    Quat d = canonicalized(hamilton(q_gt, inverse(q_pred)));
    return std::atan2(d.vec_norm(), d.w);
}

/// Spherical linear interpolation between unit quaternions, shortest arc.
inline Quat slerp(const Quat& a, const Quat& b, double t) {
    Quat bb = b;
    double c = dot(a, bb);
    if (c < 0.0) {
        bb = {-b.w, -b.x, -b.y, -b.z};
        c = -c;
    }
    if (c > 1.0 - 1e-12) {
        // nearly parallel: linear blend
        return normalized(a.w + t * (bb.w - a.w), a.x + t * (bb.x - a.x),
                          a.y + t * (bb.y - a.y), a.z + t * (bb.z - a.z));
    }
    const double theta = std::acos(c);
    const double s = std::sin(theta);
    const double fa = std::sin((1.0 - t) * theta) / s;
    const double fb = std::sin(t * theta) / s;
    return normalized(fa * a.w + fb * bb.w, fa * a.x + fb * bb.x, fa * a.y + fb * bb.y,
                      fa * a.z + fb * bb.z);
}

} // namespace qdyn
