#include "surfel/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace surfel {

double pose_consistency_score(double d, double r, double t, double s) {
    auto term = [s](double x) { return std::log2(1 + 1 / (x + s)); };
    return term(d) + term(r) + term(t);
}

template <typename Scalar>
std::vector<double> keyframe_probabilities(const std::vector<KeyframeCandidate<Scalar>>& candidates,
                                           int current_index, const Pose<Scalar>& current_pose, int k, double s,
                                           double p_c) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (s <= 0) throw std::invalid_argument("s must be positive");
    std::vector<double> p(candidates.size());
    double total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const double d = double((c.pose.translation - current_pose.translation).norm());
        const double r = double(rotation_angle(c.pose.rotation, current_pose.rotation));
        const double t = double(std::abs(current_index - c.frame_index)) / k;
        p[i] = pose_consistency_score(d, r, t, s);
        total += p[i];
    }
    if (total > 0)
        for (double& v : p) v *= (1 - p_c) / total;
    return p;
}

std::vector<std::size_t> sample_keyframes(const std::vector<double>& probabilities, int n, std::uint64_t seed) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < probabilities.size(); ++i)
        if (probabilities[i] > 0) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probabilities[a] > probabilities[b]; });
    if (n <= 0) return {};
    if (std::size_t(n) >= order.size()) return order;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0, 1);
    std::vector<std::size_t> picked;
    while (int(picked.size()) < n) {
        double total = 0;
        for (std::size_t i : order) total += probabilities[i];
        const double u = uniform(rng) * total;
        double acc = 0;
        std::size_t j = 0;
        for (; j + 1 < order.size(); ++j) {
            acc += probabilities[order[j]];
            if (u < acc) break;
        }
        picked.push_back(order[j]);
        order.erase(order.begin() + std::ptrdiff_t(j));
    }
    return picked;
}

template <typename Scalar>
Mask expansion_mask(const RenderOutput<Scalar>& out, const Frame<Scalar>& frame, double rho_e, double margin) {
    Mask m(frame.width(), frame.height());
    m.data.setConstant(false);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) {
        if (!frame.valid_depth(i)) continue;
        const Scalar s = out.silhouette.data(i);
        const Scalar gt = frame.depth.data(i);
        const bool uncovered = s < Scalar(rho_e);
        const bool occluding = s > Scalar(0.5) && gt < out.depth.data(i) - Scalar(margin) * gt;
        m.data(i) = uncovered || occluding;
    }
    return m;
}

template <typename Scalar>
std::size_t expand_gaussians(GaussianMap<Scalar>& map, Frame<Scalar>& frame, const Pose<Scalar>& pose,
                             const Mask& mask, const CameraIntrinsics<Scalar>& intr, int stride) {
    const GaussianMap<Scalar> added = init_map_from_frame(frame, pose, intr, stride, &mask, false);
    map.append(added);
    return added.size();
}

template <typename Scalar>
MappingStats<Scalar> map_update(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer,
                                const MappingView<Scalar>* current, const std::vector<MappingView<Scalar>>& keyframes,
                                const CameraIntrinsics<Scalar>& intr, const MappingConfig& config, int iterations,
                                std::uint64_t seed, const RenderOptions& opts) {
    MappingStats<Scalar> stats;
    if (map.empty() || iterations <= 0 || (!current && keyframes.empty())) return stats;
    optimizer.resize(map.size());
    const LossWeights weights = config.weights();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0, 1);
    std::size_t next = 0;

    for (int it = 0; it < iterations; ++it) {
        const bool use_current = current && (it == 0 || keyframes.empty() || uniform(rng) < config.p_c);
        const MappingView<Scalar>& view = use_current ? *current : keyframes[next++ % keyframes.size()];
        if (use_current) ++stats.current_visits;

        const RenderOutput<Scalar> out = render(map, intr, view.pose, opts);
        const Mask mask = view.frame->depth_mask();
        if (count(mask) == 0) {
            ++stats.skipped;
            continue;
        }
        BufferAdjoints<Scalar> adj;
        const LossBreakdown<Scalar> lb = evaluate_objective(out, *view.frame, intr, ExposureParams<Scalar>{}, mask,
                                                            weights, &adj);
        if (!std::isfinite(lb.total)) {
            ++stats.skipped;
            continue;
        }
        if (stats.steps == 0) stats.first_loss = lb.total;
        stats.last_loss = lb.total;
        const RenderGradients<Scalar> g = render_backward(map, intr, view.pose, out, adj, {true, false});
        optimizer.step(map, g.gaussians);
        ++stats.steps;
    }
    if (config.prune) stats.pruned = prune_transparent(map, optimizer, Scalar(config.prune_opacity));
    return stats;
}

template <typename Scalar>
std::size_t prune_transparent(GaussianMap<Scalar>& map, MapOptimizer<Scalar>& optimizer, Scalar threshold) {
    optimizer.resize(map.size());
    std::vector<bool> keep(map.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        keep[i] = map.gaussians[i].opacity() >= threshold;
        if (!keep[i]) continue;
        map.gaussians[j] = map.gaussians[i];
        map.creation_frame[j] = map.creation_frame[i];
        ++j;
    }
    const std::size_t removed = map.size() - j;
    map.gaussians.resize(j);
    map.creation_frame.resize(j);
    optimizer.compact(keep);
    return removed;
}

#define SURFEL_INSTANTIATE(S)                                                                                    \
    template std::vector<double> keyframe_probabilities<S>(const std::vector<KeyframeCandidate<S>>&, int,        \
                                                           const Pose<S>&, int, double, double);                \
    template Mask expansion_mask<S>(const RenderOutput<S>&, const Frame<S>&, double, double);                   \
    template std::size_t expand_gaussians<S>(GaussianMap<S>&, Frame<S>&, const Pose<S>&, const Mask&,           \
                                             const CameraIntrinsics<S>&, int);                                   \
    template MappingStats<S> map_update<S>(GaussianMap<S>&, MapOptimizer<S>&, const MappingView<S>*,            \
                                           const std::vector<MappingView<S>>&, const CameraIntrinsics<S>&,      \
                                           const MappingConfig&, int, std::uint64_t, const RenderOptions&);     \
    template std::size_t prune_transparent<S>(GaussianMap<S>&, MapOptimizer<S>&, S);

SURFEL_INSTANTIATE(float)
SURFEL_INSTANTIATE(double)
#undef SURFEL_INSTANTIATE

}  // namespace surfel
