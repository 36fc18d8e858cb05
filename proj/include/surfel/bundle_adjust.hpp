#pragma once

#include "surfel/mapping.hpp"
#include "surfel/tracking.hpp"

#include <cstdint>
#include <vector>

namespace surfel {

struct BaConfig {
    bool enabled = true;
    int period = 100;        ///< tracked frames between runs
    int iterations = 200;
    int keyframes = 8;       ///< sampled per run
    double pose_lr_scale = 0.5;  ///< relative to the tracking rates
    double alpha = 1000;
    double beta = 0.05;
    /// Pixels enter the loss only where GT depth is valid and the silhouette exceeds this (as in tracking).
    double silhouette_threshold = 0.99;
};

/// A keyframe whose pose BA may update in place.
template <typename Scalar>
struct BaView {
    const Frame<Scalar>* frame = nullptr;
    Pose<Scalar>* pose = nullptr;
    int frame_index = 0;
};

template <typename Scalar>
struct BaStats {
    std::vector<int> selected;  ///< frame indices
    int steps = 0;
    int skipped = 0;
    Scalar loss_before = 0;  ///< summed over the selected batch
    Scalar loss_after = 0;
};

/// Samples up to `config.keyframes` views relative to (current_index, current_pose) and descends the
/// BA loss jointly over their poses and the map for `config.iterations` steps, visiting the batch in
/// seeded random order. The pose of frame 0 never moves. Throws std::invalid_argument with fewer than
/// two views.
template <typename Scalar>
BaStats<Scalar> run_ba(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer, std::vector<BaView<Scalar>>& views,
                       int current_index, const Pose<Scalar>& current_pose, const CameraIntrinsics<Scalar>& intr,
                       const BaConfig& config, const TrackingConfig& tracking, const MappingConfig& mapping,
                       Scalar scene_scale, std::uint64_t seed, const RenderOptions& opts = {});

/// Sum of the BA loss over the views at their current poses (views with empty masks contribute 0).
template <typename Scalar>
[[nodiscard]] Scalar ba_batch_loss(const GaussianMap<Scalar>& map, const std::vector<BaView<Scalar>>& views,
                                   const CameraIntrinsics<Scalar>& intr, const BaConfig& config,
                                   const RenderOptions& opts = {});

}  // namespace surfel
