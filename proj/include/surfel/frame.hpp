#pragma once

#include "surfel/gaussian.hpp"
#include "surfel/geometry.hpp"

#include <optional>

namespace surfel {

/// One RGB-D observation. Geometry maps are expressed in the camera frame and derived on demand.
template <typename Scalar>
struct Frame {
    int index = 0;
    double timestamp = 0;
    Image3<Scalar> color;    // [0, 1]
    Image1<Scalar> depth;    // meters, 0 = invalid
    std::optional<Image3<Scalar>> points;   // back-projected GT depth, camera frame, NaN where invalid
    std::optional<Image3<Scalar>> normals;  // unit, camera-facing, NaN where undefined

    [[nodiscard]] int width() const { return depth.width; }
    [[nodiscard]] int height() const { return depth.height; }
    [[nodiscard]] bool valid_depth(Eigen::Index i) const {
        const Scalar d = depth.data(i);
        return d > 0 && std::isfinite(d);
    }

    void ensure_geometry(const CameraIntrinsics<Scalar>& intr);
    [[nodiscard]] Mask depth_mask() const;
};

/// Normals from central differences of a point map (one-sided at borders), oriented to face
/// `camera_center`. Pixels whose 8-neighborhood touches an invalid point are NaN.
template <typename Scalar>
[[nodiscard]] Image3<Scalar> gt_normal_from_depth(const Image3<Scalar>& points,
                                                  const Vector3<Scalar>& camera_center = Vector3<Scalar>::Zero());

/// Seeds one splat per `stride`-th valid pixel (optionally restricted to `mask`).
/// Throws std::invalid_argument("no valid depth to initialize") when nothing qualifies and
/// `require_nonempty` is set.
template <typename Scalar>
[[nodiscard]] GaussianMap<Scalar> init_map_from_frame(Frame<Scalar>& frame, const Pose<Scalar>& pose,
                                                      const CameraIntrinsics<Scalar>& intr, int stride,
                                                      const Mask* mask = nullptr, bool require_nonempty = true);

/// Decimates a frame by an integer factor (sampling every `divisor`-th pixel).
template <typename Scalar>
[[nodiscard]] Frame<Scalar> downsample(const Frame<Scalar>& frame, int divisor);

}  // namespace surfel
