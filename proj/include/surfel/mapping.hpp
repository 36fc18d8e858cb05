#pragma once

#include "surfel/frame.hpp"
#include "surfel/objectives.hpp"
#include "surfel/optimizer.hpp"
#include "surfel/rasterizer.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace surfel {

struct MappingConfig {
    int k = 8;                 ///< candidate admission / expansion period in frames
    int n = 8;                 ///< keyframes drawn per update
    double rho_e = 0.5;        ///< silhouette threshold for expansion
    double p_c = 0.1;          ///< probability of visiting the current frame in a mapping iteration
    double s = 0.2;            ///< probability scaler
    int iterations = 15;       ///< per mapping update
    int period = 1;            ///< frames between mapping updates
    int first_frame_iterations = 100;
    double expansion_margin = 0.05;  ///< relative depth margin for "in front of the surface"
    int init_stride = 1;
    SplatLearningRates lr{};        ///< position rate is multiplied by the scene scale
    double lambda = 0.2;
    double alpha = 1000;
    double beta = 0.05;
    bool prune = false;
    double prune_opacity = 0.005;
    AdamConfig adam{};

    [[nodiscard]] LossWeights weights() const { return LossWeights::mapping(lambda, alpha, beta); }
};

template <typename Scalar>
struct KeyframeCandidate {
    int frame_index = 0;
    Pose<Scalar> pose;
    std::shared_ptr<const Frame<Scalar>> frame;
};

/// log2(1 + 1/(d + s)) + log2(1 + 1/(r + s)) + log2(1 + 1/(t + s)).
[[nodiscard]] double pose_consistency_score(double d, double r, double t, double s);

/// Sampling probabilities of the candidates relative to the current frame, summing to 1 - p_c.
/// d is the camera distance, r the geodesic angle, t the frame gap divided by `k`.
template <typename Scalar>
[[nodiscard]] std::vector<double> keyframe_probabilities(const std::vector<KeyframeCandidate<Scalar>>& candidates,
                                                         int current_index, const Pose<Scalar>& current_pose, int k,
                                                         double s, double p_c);

/// `n` candidate indices drawn without replacement by inverting the CDF of the probabilities sorted
/// in decreasing order (ties by position). Returns every index with positive probability when n exceeds them.
[[nodiscard]] std::vector<std::size_t> sample_keyframes(const std::vector<double>& probabilities, int n,
                                                        std::uint64_t seed);

/// (S < rho_e) OR (S > 0.5 AND D_gt < D - margin * D_gt), restricted to valid GT depth.
template <typename Scalar>
[[nodiscard]] Mask expansion_mask(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame, double rho_e,
                                  double margin = 0.05);

/// Seeds splats at the masked pixels exactly as init_map_from_frame does; returns the number added.
template <typename Scalar>
std::size_t expand_gaussians(GaussianMap<Scalar>& map, Frame<Scalar>& frame, const Pose<Scalar>& pose,
                             const Mask& mask, const CameraIntrinsics<Scalar>& intr, int stride);

/// A frame with a fixed pose used as a mapping target.
template <typename Scalar>
struct MappingView {
    const Frame<Scalar>* frame = nullptr;
    Pose<Scalar> pose;
};

template <typename Scalar>
struct MappingStats {
    int steps = 0;
    int skipped = 0;
    int current_visits = 0;
    Scalar first_loss = 0;
    Scalar last_loss = 0;
    std::size_t pruned = 0;
};

/// Runs `iterations` optimizer steps on the map. The first step targets `current`; each later step
/// targets `current` with probability p_c and otherwise the next keyframe in cyclic order. Without a
/// current view every step cycles through the keyframes. Poses are never modified. Frames must have
/// geometry prepared.
template <typename Scalar>
MappingStats<Scalar> map_update(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer,
                                const MappingView<Scalar>* current, const std::vector<MappingView<Scalar>>& keyframes,
                                const CameraIntrinsics<Scalar>& intr, const MappingConfig& config, int iterations,
                                std::uint64_t seed, const RenderOptions& opts = {});

/// Removes splats with opacity below `threshold` (and their optimizer state); returns how many.
template <typename Scalar>
std::size_t prune_transparent(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer, Scalar threshold);

}  // namespace surfel
