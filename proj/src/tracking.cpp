#include "surfel/tracking.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace surfel {

template <typename Scalar>
Pose<Scalar> TrackerState<Scalar>::initial_guess() const {
    if (history.empty()) return Pose<Scalar>::Identity();
    if (history.size() == 1) return history.back();
    return constant_velocity_init(history[history.size() - 1], history[history.size() - 2]);
}

template <typename Scalar>
TrackingResult<Scalar> refine_pose(const GaussianMap<Scalar>& map, const Frame<Scalar>& frame,
                                   const Pose<Scalar>& initial, const CameraIntrinsics<Scalar>& intr,
                                   const TrackingConfig& config, Scalar scene_scale, const RenderOptions& opts) {
    LossWeights weights = LossWeights::tracking();
    if (!config.point_to_plane) weights.p2plane = 0;

    using Vec8 = Eigen::Matrix<Scalar, 8, 1>;
    Vec8 lr;
    lr << Vector3<Scalar>::Constant(Scalar(config.lr_rotation)),
        Vector3<Scalar>::Constant(Scalar(config.lr_translation) * scene_scale), Scalar(config.lr_exposure),
        Scalar(config.lr_exposure);
    if (!config.optimize_exposure) lr.template tail<2>().setZero();

    TrackingResult<Scalar> result;
    result.pose = initial;
    Adam<Scalar, 8> adam;
    Pose<Scalar> pose = initial;
    ExposureParams<Scalar> exposure;
    const Vector3<Scalar> pivot(0, 0, Scalar(config.pivot_depth) * scene_scale);
    Scalar best = std::numeric_limits<Scalar>::infinity();

    auto fail = [&](const char* why) {
        result.pose = initial;
        result.exposure = {};
        result.diverged = true;
        result.error = why;
        return result;
    };

    for (int it = 0; it <= config.iterations; ++it) {
        const RenderOutput<Scalar> out = render(map, intr, pose, opts);
        const Mask mask = tracking_mask(out, frame, Scalar(config.silhouette_threshold));
        if (count(mask) == 0) return fail("tracking diverged: empty mask");
        const bool last = it == config.iterations;
        BufferAdjoints<Scalar> adj;
        ExposureGradient<Scalar> eg;
        const LossBreakdown<Scalar> lb =
            evaluate_objective(out, frame, intr, exposure, mask, weights, last ? nullptr : &adj, last ? nullptr : &eg);
        if (!std::isfinite(lb.total)) return fail("tracking diverged");
        if (it == 0) result.initial_loss = lb.total;
        if (lb.total > Scalar(config.divergence_factor) * result.initial_loss) return fail("tracking diverged: loss grew");
        result.losses.push_back(lb.total);
        if (lb.total < best) {
            best = lb.total;
            result.pose = pose;
            result.exposure = exposure;
            result.loss = lb;
            result.best_iteration = it;
        }
        if (last) break;

        const RenderGradients<Scalar> g = render_backward(map, intr, pose, out, adj, {false, true});
        Vec8 grad;
        grad << pivot_rotation_gradient(pose, g.pose_rotation, g.pose_translation, pivot), g.pose_translation, eg.a,
            eg.b;
        if (!grad.allFinite()) return fail("tracking diverged: gradient");
        const Scalar decay =
            config.iterations > 1 ? std::pow(Scalar(config.lr_final_fraction), Scalar(it) / (config.iterations - 1)) : 1;
        const Vec8 delta = adam.step(grad, decay * lr, config.adam);
        pose = pivot_retract(pose, Vector3<Scalar>(delta.template head<3>()), Vector3<Scalar>(delta.template segment<3>(3)),
                             pivot);
        exposure.a += delta[6];
        exposure.b += delta[7];
    }
    return result;
}

template <typename Scalar>
TrackingResult<Scalar> track_frame(const GaussianMap<Scalar>& map, const Frame<Scalar>& frame,
                                   TrackerState<Scalar>& state, const CameraIntrinsics<Scalar>& intr,
                                   const RenderOptions& opts) {
    if (map.empty()) throw std::invalid_argument("empty scene");
    const Pose<Scalar> init = state.initial_guess();
    TrackingResult<Scalar> r = refine_pose(map, frame, init, intr, state.config, state.scene_scale, opts);
    state.push(r.pose);
    return r;
}

#define SURFEL_INSTANTIATE(S)                                                                                   \
    template struct TrackerState<S>;                                                                            \
    template TrackingResult<S> refine_pose<S>(const GaussianMap<S>&, const Frame<S>&, const Pose<S>&,          \
                                              const CameraIntrinsics<S>&, const TrackingConfig&, S,            \
                                              const RenderOptions&);                                           \
    template TrackingResult<S> track_frame<S>(const GaussianMap<S>&, const Frame<S>&, TrackerState<S>&,        \
                                              const CameraIntrinsics<S>&, const RenderOptions&);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
