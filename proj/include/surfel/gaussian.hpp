#pragma once

#include "surfel/types.hpp"

#include <cmath>
#include <vector>

namespace surfel {

template <typename Scalar>
[[nodiscard]] inline Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
[[nodiscard]] inline Scalar logit(Scalar p) {
    return std::log(p / (Scalar(1) - p));
}

/// Planar Gaussian primitive. Parameters are stored in their unconstrained form.
template <typename Scalar>
struct Gaussian2D {
    Vector3<Scalar> position = Vector3<Scalar>::Zero();
    /// Quaternion coefficients in (w, x, y, z) order; normalized when decoded.
    Vector4<Scalar> rotation = Vector4<Scalar>(1, 0, 0, 0);
    Vector2<Scalar> log_scale = Vector2<Scalar>::Zero();
    Scalar opacity_logit = 0;
    /// Unconstrained RGB, clamped to [0, 1] at render time.
    Vector3<Scalar> color = Vector3<Scalar>::Zero();

    [[nodiscard]] Quaternion<Scalar> quaternion() const {
        return Quaternion<Scalar>(rotation[0], rotation[1], rotation[2], rotation[3]).normalized();
    }
    void set_quaternion(const Quaternion<Scalar>& q) {
        const Quaternion<Scalar> n = q.normalized();
        rotation = Vector4<Scalar>(n.w(), n.x(), n.y(), n.z());
    }
    /// Columns are t_u, t_v and the normal t_w = t_u x t_v.
    [[nodiscard]] Matrix3<Scalar> frame() const { return quaternion().toRotationMatrix(); }
    [[nodiscard]] Vector3<Scalar> normal() const { return frame().col(2); }
    [[nodiscard]] Vector2<Scalar> scale() const { return log_scale.array().exp().matrix(); }
    [[nodiscard]] Scalar opacity() const { return sigmoid(opacity_logit); }

    void normalize_rotation() { rotation.normalize(); }
};

template <typename Scalar>
struct GaussianMap {
    std::vector<Gaussian2D<Scalar>> gaussians;
    /// Frame index that created each splat; diagnostics only.
    std::vector<int> creation_frame;

    [[nodiscard]] std::size_t size() const { return gaussians.size(); }
    [[nodiscard]] bool empty() const { return gaussians.empty(); }

    void push_back(const Gaussian2D<Scalar>& g, int frame_index) {
        gaussians.push_back(g);
        creation_frame.push_back(frame_index);
    }

    void append(const GaussianMap& other) {
        gaussians.insert(gaussians.end(), other.gaussians.begin(), other.gaussians.end());
        creation_frame.insert(creation_frame.end(), other.creation_frame.begin(), other.creation_frame.end());
    }
};

}  // namespace surfel
