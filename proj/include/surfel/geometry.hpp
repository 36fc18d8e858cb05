#pragma once

#include "surfel/types.hpp"

#include <cmath>
#include <limits>

namespace surfel {

/// Cross-product matrix: skew(a) * b == a.cross(b).
template <typename Scalar>
[[nodiscard]] Matrix3<Scalar> skew(const Vector3<Scalar>& a) {
    Matrix3<Scalar> m;
    m << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
    return m;
}

/// Unit quaternion for the rotation vector `omega` (axis * angle).
template <typename Scalar>
[[nodiscard]] Quaternion<Scalar> quat_exp(const Vector3<Scalar>& omega) {
    const Scalar theta = omega.norm();
    if (theta < Scalar(1e-10)) {
        Quaternion<Scalar> q(Scalar(1), omega.x() / 2, omega.y() / 2, omega.z() / 2);
        return q.normalized();
    }
    const Scalar half = theta / 2;
    const Vector3<Scalar> axis = omega / theta;
    const Scalar s = std::sin(half);
    return Quaternion<Scalar>(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

/// Rotation vector of a unit quaternion, angle in [0, pi].
template <typename Scalar>
[[nodiscard]] Vector3<Scalar> quat_log(const Quaternion<Scalar>& q_in) {
    Quaternion<Scalar> q = q_in.normalized();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    const Vector3<Scalar> v = q.vec();
    const Scalar sin_half = v.norm();
    if (sin_half < Scalar(1e-12)) return Scalar(2) * v;
    const Scalar angle = Scalar(2) * std::atan2(sin_half, q.w());
    return v * (angle / sin_half);
}

/// Geodesic angle (radians, in [0, pi]) of the relative rotation a^-1 * b.
template <typename Scalar>
[[nodiscard]] Scalar rotation_angle(const Quaternion<Scalar>& a, const Quaternion<Scalar>& b) {
    return quat_log<Scalar>(a.conjugate() * b).norm();
}

/// Rigid camera-to-world transform.
template <typename Scalar>
struct Pose {
    Quaternion<Scalar> rotation = Quaternion<Scalar>::Identity();
    Vector3<Scalar> translation = Vector3<Scalar>::Zero();

    Pose() = default;
    Pose(const Quaternion<Scalar>& q, const Vector3<Scalar>& t) : rotation(q.normalized()), translation(t) {}

    static Pose Identity() { return Pose(); }

    [[nodiscard]] Matrix3<Scalar> matrix() const { return rotation.toRotationMatrix(); }

    [[nodiscard]] Vector3<Scalar> operator*(const Vector3<Scalar>& p) const {
        return rotation * p + translation;
    }

    [[nodiscard]] Pose inverse() const {
        const Quaternion<Scalar> qi = rotation.conjugate();
        return Pose(qi, -(qi * translation));
    }

    [[nodiscard]] friend Pose operator*(const Pose& a, const Pose& b) {
        Pose out;
        out.rotation = (a.rotation * b.rotation).normalized();
        out.translation = a.rotation * b.translation + a.translation;
        return out;
    }

    /// Right-multiplied rotation perturbation (body frame) plus additive translation.
    [[nodiscard]] Pose retract(const Vector3<Scalar>& d_rotation, const Vector3<Scalar>& d_translation) const {
        Pose out;
        out.rotation = (rotation * quat_exp<Scalar>(d_rotation)).normalized();
        out.translation = translation + d_translation;
        return out;
    }

    template <typename T>
    [[nodiscard]] Pose<T> cast() const {
        return Pose<T>(rotation.template cast<T>(), translation.template cast<T>());
    }
};

template <typename Scalar>
[[nodiscard]] Pose<Scalar> compose(const Pose<Scalar>& a, const Pose<Scalar>& b) {
    return a * b;
}

template <typename Scalar>
[[nodiscard]] Pose<Scalar> inverse(const Pose<Scalar>& p) {
    return p.inverse();
}

/// Extrapolates p_prev by the motion between p_prev2 and p_prev.
/// Translation delta is added; rotation delta p_prev2^-1 * p_prev is applied on the right.
template <typename Scalar>
[[nodiscard]] Pose<Scalar> constant_velocity_init(const Pose<Scalar>& p_prev, const Pose<Scalar>& p_prev2) {
    Pose<Scalar> out;
    const Quaternion<Scalar> delta = p_prev2.rotation.conjugate() * p_prev.rotation;
    out.rotation = (p_prev.rotation * delta).normalized();
    out.translation = p_prev.translation + (p_prev.translation - p_prev2.translation);
    return out;
}

/// Pinhole model. Pixel centers sit at integer coordinates.
template <typename Scalar>
struct CameraIntrinsics {
    Scalar fx = 1;
    Scalar fy = 1;
    Scalar cx = 0;
    Scalar cy = 0;
    int width = 0;
    int height = 0;
    Scalar depth_scale = 1000;

    [[nodiscard]] bool valid() const {
        return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
    }

    [[nodiscard]] Matrix3<Scalar> K() const {
        Matrix3<Scalar> k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }

    [[nodiscard]] Vector2<Scalar> project(const Vector3<Scalar>& p_cam) const {
        return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
    }

    /// Ray through pixel (x, y) with unit z component.
    [[nodiscard]] Vector3<Scalar> ray(Scalar x, Scalar y) const {
        return {(x - cx) / fx, (y - cy) / fy, Scalar(1)};
    }

    /// Intrinsics of the image decimated by `divisor` (pixel x' samples full-resolution x = divisor * x').
    [[nodiscard]] CameraIntrinsics downscaled(int divisor) const {
        CameraIntrinsics out = *this;
        out.fx = fx / divisor;
        out.fy = fy / divisor;
        out.cx = cx / divisor;
        out.cy = cy / divisor;
        out.width = (width + divisor - 1) / divisor;
        out.height = (height + divisor - 1) / divisor;
        return out;
    }

    template <typename T>
    [[nodiscard]] CameraIntrinsics<T> cast() const {
        return {T(fx), T(fy), T(cx), T(cy), width, height, T(depth_scale)};
    }
};

/// Back-projects a depth map through `pose`. Pixels with depth <= 0 (or non-finite) become NaN.
template <typename Scalar>
[[nodiscard]] Image3<Scalar> backproject(const Image1<Scalar>& depth, const CameraIntrinsics<Scalar>& intr,
                                         const Pose<Scalar>& pose = Pose<Scalar>::Identity()) {
    Image3<Scalar> out(depth.width, depth.height, std::numeric_limits<Scalar>::quiet_NaN());
    const Matrix3<Scalar> R = pose.matrix();
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const Scalar d = depth(x, y);
            if (!(d > 0) || !std::isfinite(d)) continue;
            const Vector3<Scalar> p_cam = intr.ray(Scalar(x), Scalar(y)) * d;
            set_pixel3(out, out.index(x, y), Vector3<Scalar>(R * p_cam + pose.translation));
        }
    }
    return out;
}

}  // namespace surfel
