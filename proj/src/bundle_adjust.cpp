#include "surfel/bundle_adjust.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace surfel {

template <typename Scalar>
Scalar ba_batch_loss(const GaussianMap<Scalar>& map, const std::vector<BaView<Scalar>>& views,
                     const CameraIntrinsics<Scalar>& intr, const BaConfig& config, const RenderOptions& opts) {
    const LossWeights weights = LossWeights::bundle_adjust(config.alpha, config.beta);
    Scalar total = 0;
    for (const auto& v : views) {
        const RenderOutput<Scalar> out = render(map, intr, *v.pose, opts);
        const Mask mask = tracking_mask(out, *v.frame, Scalar(config.silhouette_threshold));
        if (count(mask) == 0) continue;
        total += evaluate_objective(out, *v.frame, intr, ExposureParams<Scalar>{}, mask, weights).total;
    }
    return total;
}

template <typename Scalar>
BaStats<Scalar> run_ba(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer, std::vector<BaView<Scalar>>& views,
                       int current_index, const Pose<Scalar>& current_pose, const CameraIntrinsics<Scalar>& intr,
                       const BaConfig& config, const TrackingConfig& tracking, const MappingConfig& mapping,
                       Scalar scene_scale, std::uint64_t seed, const RenderOptions& opts) {
    if (views.size() < 2) throw std::invalid_argument("bundle adjustment needs at least two keyframes");
    BaStats<Scalar> stats;

    std::vector<KeyframeCandidate<Scalar>> candidates;
    for (const auto& v : views) candidates.push_back({v.frame_index, *v.pose, nullptr});
    const std::vector<double> p =
        keyframe_probabilities(candidates, current_index, current_pose, mapping.k, mapping.s, mapping.p_c);
    std::vector<std::size_t> picked = sample_keyframes(p, config.keyframes, seed);
    std::sort(picked.begin(), picked.end());
    std::vector<BaView<Scalar>> batch;
    for (std::size_t i : picked) {
        batch.push_back(views[i]);
        stats.selected.push_back(views[i].frame_index);
    }
    if (batch.empty()) return stats;

    stats.loss_before = ba_batch_loss(map, batch, intr, config, opts);
    const LossWeights weights = LossWeights::bundle_adjust(config.alpha, config.beta);
    using Vec6 = Eigen::Matrix<Scalar, 6, 1>;
    const Scalar scale = Scalar(config.pose_lr_scale);
    Vec6 lr;
    lr << Vector3<Scalar>::Constant(scale * Scalar(tracking.lr_rotation)),
        Vector3<Scalar>::Constant(scale * Scalar(tracking.lr_translation) * scene_scale);
    const Vector3<Scalar> pivot(0, 0, Scalar(tracking.pivot_depth) * scene_scale);
    std::vector<Adam<Scalar, 6>> pose_state(batch.size());
    optimizer.resize(map.size());

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(batch.size());
    std::size_t cursor = order.size();
    for (int it = 0; it < config.iterations; ++it) {
        if (cursor == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t b = order[cursor++];
        BaView<Scalar>& view = batch[b];
        const RenderOutput<Scalar> out = render(map, intr, *view.pose, opts);
        const Mask mask = tracking_mask(out, *view.frame, Scalar(config.silhouette_threshold));
        if (count(mask) == 0) {
            ++stats.skipped;
            continue;
        }
        BufferAdjoints<Scalar> adj;
        const LossBreakdown<Scalar> lb =
            evaluate_objective(out, *view.frame, intr, ExposureParams<Scalar>{}, mask, weights, &adj);
        if (!std::isfinite(lb.total)) {
            ++stats.skipped;
            continue;
        }
        const bool frozen = view.frame_index == 0;
        const RenderGradients<Scalar> g = render_backward(map, intr, *view.pose, out, adj, {true, !frozen});
        optimizer.step(map, g.gaussians);
        if (!frozen) {
            Vec6 grad;
            grad << pivot_rotation_gradient(*view.pose, g.pose_rotation, g.pose_translation, pivot), g.pose_translation;
            if (grad.allFinite()) {
                const Vec6 delta = pose_state[b].step(grad, lr, tracking.adam);
                *view.pose = pivot_retract(*view.pose, Vector3<Scalar>(delta.template head<3>()),
                                           Vector3<Scalar>(delta.template tail<3>()), pivot);
            }
        }
        ++stats.steps;
    }
    stats.loss_after = ba_batch_loss(map, batch, intr, config, opts);
    return stats;
}

#define SURFEL_INSTANTIATE(S)                                                                                      \
    template S ba_batch_loss<S>(const GaussianMap<S>&, const std::vector<BaView<S>>&, const CameraIntrinsics<S>&, \
                                const BaConfig&, const RenderOptions&);                                            \
    template BaStats<S> run_ba<S>(GaussianMap<S>&, MapOptimizer<S>&, std::vector<BaView<S>>&, int, const Pose<S>&, \
                                  const CameraIntrinsics<S>&, const BaConfig&, const TrackingConfig&,              \
                                  const MappingConfig&, S, std::uint64_t, const RenderOptions&);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
