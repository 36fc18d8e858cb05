#pragma once

#include "surfel/frame.hpp"
#include "surfel/objectives.hpp"
#include "surfel/optimizer.hpp"
#include "surfel/rasterizer.hpp"

#include <string>
#include <vector>

namespace surfel {

struct TrackingConfig {
    int iterations = 15;
    double lr_rotation = 2e-3;     ///< radians
    double lr_translation = 4e-3;  ///< in units of scene scale
    double lr_exposure = 1e-2;
    /// Learning rates decay geometrically to this fraction of their initial value at the last step.
    double lr_final_fraction = 0.1;
    /// Rotation steps pivot about a point this many scene scales in front of the camera.
    /// 0 rotates about the camera center.
    double pivot_depth = 1.0;
    double silhouette_threshold = 0.99;
    /// A loss above this multiple of the initial loss counts as divergence.
    double divergence_factor = 10;
    bool point_to_plane = true;
    bool optimize_exposure = true;
    AdamConfig adam{0.7, 0.999, 1e-15};
};

/// Gradient with respect to a rotation that pivots about `pivot` (camera frame) instead of the
/// camera center, given the right-perturbation rotation and world translation gradients.
template <typename Scalar>
[[nodiscard]] Vector3<Scalar> pivot_rotation_gradient(const Pose<Scalar>& pose, const Vector3<Scalar>& g_rot,
                                                      const Vector3<Scalar>& g_trans, const Vector3<Scalar>& pivot) {
    return g_rot - skew(pivot) * (pose.matrix().transpose() * g_trans);
}

/// Rotates by `d_rot` about the pivot and translates by `d_trans` (world).
template <typename Scalar>
[[nodiscard]] Pose<Scalar> pivot_retract(const Pose<Scalar>& pose, const Vector3<Scalar>& d_rot,
                                         const Vector3<Scalar>& d_trans, const Vector3<Scalar>& pivot) {
    Pose<Scalar> next = pose.retract(d_rot, d_trans);
    next.translation += (pose.matrix() - next.matrix()) * pivot;
    return next;
}

template <typename Scalar>
struct TrackerState {
    TrackingConfig config;
    /// Length scale for translation steps (mean depth of the first frame).
    Scalar scene_scale = 1;
    /// Most recent tracked poses, oldest first; at most two are used.
    std::vector<Pose<Scalar>> history;

    void push(const Pose<Scalar>& p) {
        history.push_back(p);
        if (history.size() > 2) history.erase(history.begin());
    }
    /// Constant-velocity extrapolation of the history (the last pose when only one exists).
    [[nodiscard]] Pose<Scalar> initial_guess() const;
};

template <typename Scalar>
struct TrackingResult {
    Pose<Scalar> pose;
    ExposureParams<Scalar> exposure;
    LossBreakdown<Scalar> loss;  ///< at the returned pose
    Scalar initial_loss = 0;
    int best_iteration = 0;
    bool diverged = false;
    std::string error;
    std::vector<Scalar> losses;  ///< one per evaluated iterate
};

/// Gradient descent on the tracking loss from `initial`, the map held fixed. Evaluates
/// `config.iterations + 1` iterates and returns the one with the lowest loss. On a non-finite loss,
/// an empty tracking mask or a loss above divergence_factor times the initial one, returns `initial`
/// with `diverged` set. `frame` must have geometry prepared when point_to_plane is enabled.
template <typename Scalar>
[[nodiscard]] TrackingResult<Scalar> refine_pose(const GaussianMap<Scalar>& map, const Frame<Scalar>& frame,
                                                 const Pose<Scalar>& initial, const CameraIntrinsics<Scalar>& intr,
                                                 const TrackingConfig& config, Scalar scene_scale,
                                                 const RenderOptions& opts = {});

/// Tracks one frame from the constant-velocity guess and appends the result to `state.history`.
template <typename Scalar>
TrackingResult<Scalar> track_frame(const GaussianMap<Scalar>& map, const Frame<Scalar>& frame,
                                   TrackerState<Scalar>& state, const CameraIntrinsics<Scalar>& intr,
                                   const RenderOptions& opts = {});

}  // namespace surfel
