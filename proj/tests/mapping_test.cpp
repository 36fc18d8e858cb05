#include "test_support.hpp"

#include "surfel/mapping.hpp"
#include "surfel/metrics.hpp"
#include "surfel/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

namespace surfel {
namespace {

using testing::Rng;

KeyframeCandidate<double> candidate(int index, const Pose<double>& pose) {
    KeyframeCandidate<double> c;
    c.frame_index = index;
    c.pose = pose;
    return c;
}

Frame<double> plane_frame(const CameraIntrinsics<double>& intr, double depth) {
    Frame<double> f;
    f.color = Image3<double>(intr.width, intr.height, 0.5);
    f.depth = Image1<double>(intr.width, intr.height, depth);
    for (int y = 0; y < intr.height; ++y)
        for (int x = 0; x < intr.width; ++x) f.color(x, y, (x + y) % 3) = 0.2 + 0.6 * ((x / 3 + y / 2) % 2);
    f.ensure_geometry(intr);
    return f;
}

struct WavyView {
    CameraIntrinsics<double> intr;
    Pose<double> pose;
    Frame<double> frame;
};

WavyView wavy_view(int width, int height) {
    SynthConfig cfg;
    cfg.scene = SynthSceneKind::WavyPlane;
    cfg.width = width;
    cfg.height = height;
    WavyView v;
    v.intr = synth_intrinsics(cfg);
    v.pose = synth_trajectory(cfg.scene, 10)[3];
    v.frame = render_analytic(*make_scene(cfg.scene, 1), v.pose, v.intr);
    v.frame.ensure_geometry(v.intr);
    return v;
}

TEST(PoseConsistency, ScoreAtUnitGap) {
    const double expected = 2 * std::log2(6.0) + std::log2(11.0 / 6.0);
    EXPECT_NEAR(pose_consistency_score(0, 0, 1, 0.2), expected, 1e-12);
    EXPECT_NEAR(pose_consistency_score(0, 0, 1, 0.2), 6.0444, 1e-4);
}

TEST(PoseConsistency, StrictlyDecreasingInEachTerm) {
    for (double l = 0; l < 5; l += 0.25) {
        EXPECT_GT(pose_consistency_score(l, 0.1, 0.1, 0.2), pose_consistency_score(l + 0.1, 0.1, 0.1, 0.2));
        EXPECT_GT(pose_consistency_score(0.1, l, 0.1, 0.2), pose_consistency_score(0.1, l + 0.1, 0.1, 0.2));
        EXPECT_GT(pose_consistency_score(0.1, 0.1, l, 0.2), pose_consistency_score(0.1, 0.1, l + 0.1, 0.2));
    }
}

TEST(KeyframeProbabilities, EqualCandidatesSplitRemainder) {
    const Pose<double> cur;
    std::vector<KeyframeCandidate<double>> c = {candidate(0, cur), candidate(16, cur)};
    const auto p = keyframe_probabilities(c, 8, cur, 8, 0.2, 0.1);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_NEAR(p[0], 0.45, 1e-12);
    EXPECT_NEAR(p[1], 0.45, 1e-12);
}

TEST(KeyframeProbabilities, SimplexAndOrderInvariance) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Pose<double> cur = testing::random_pose(rng, 0.5, 0.3);
        std::vector<KeyframeCandidate<double>> c;
        const int n = 1 + trial % 7;
        for (int i = 0; i < n; ++i) c.push_back(candidate(8 * i, testing::random_pose(rng, 1.0, 0.5)));
        const double p_c = testing::uniform(rng, 0.05, 0.9);
        const auto p = keyframe_probabilities(c, 8 * n, cur, 8, 0.2, p_c);
        double total = p_c;
        for (double v : p) {
            EXPECT_GE(v, 0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);

        auto rev = c;
        std::reverse(rev.begin(), rev.end());
        const auto q = keyframe_probabilities(rev, 8 * n, cur, 8, 0.2, p_c);
        for (int i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[n - 1 - i], 1e-15);
    }
}

TEST(KeyframeProbabilities, NearbyRecentCandidateWins) {
    const Pose<double> cur(Quaternion<double>::Identity(), Vector3<double>(0, 0, 0));
    const Pose<double> far(quat_exp<double>(Vector3<double>(0, 0.5, 0)), Vector3<double>(0.3, 0, 0));
    std::vector<KeyframeCandidate<double>> c = {candidate(40, far), candidate(40, cur)};
    const auto p = keyframe_probabilities(c, 48, cur, 8, 0.2, 0.1);
    EXPECT_GT(p[1], p[0]);
}

TEST(SampleKeyframes, TrivialCases) {
    EXPECT_EQ(sample_keyframes({0.9}, 1, 0), (std::vector<std::size_t>{0}));
    EXPECT_EQ(sample_keyframes({0.3, 0.0, 0.6}, 5, 0), (std::vector<std::size_t>{2, 0}));
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto s = sample_keyframes({0.3, 0.0, 0.3, 0.3}, 2, seed);
        ASSERT_EQ(s.size(), 2u);
        EXPECT_NE(s[0], s[1]);
        for (auto i : s) EXPECT_NE(i, 1u);
    }
}

TEST(SampleKeyframes, ReproducibleForSeed) {
    const std::vector<double> p = {0.1, 0.2, 0.05, 0.15, 0.3, 0.1};
    EXPECT_EQ(sample_keyframes(p, 3, 42), sample_keyframes(p, 3, 42));
}

TEST(SampleKeyframes, UniformFrequencies) {
    // Single draws from 5 equal candidates over 10^4 seeds: counts within 3 sigma of N/5.
    const int m = 5, trials = 10000;
    const std::vector<double> p(m, 0.18);
    std::vector<int> counts(m, 0);
    for (int t = 0; t < trials; ++t) ++counts[sample_keyframes(p, 1, std::uint64_t(t) * 7919 + 1)[0]];
    const double expected = double(trials) / m;
    const double sigma = std::sqrt(trials * (1.0 / m) * (1 - 1.0 / m));
    for (int c : counts) EXPECT_LT(std::abs(c - expected), 3 * sigma) << c;
}

TEST(SampleKeyframes, WithoutReplacementMatchesSequentialRenormalization) {
    // Two draws from {0.5, 0.3, 0.2}: P(first = 0, second = 1) = 0.5 * 0.3 / 0.5.
    const std::vector<double> p = {0.5, 0.3, 0.2};
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        const auto s = sample_keyframes(p, 2, std::uint64_t(t) + 11);
        ++counts[{s[0], s[1]}];
    }
    auto prob = [&](std::size_t a, std::size_t b) { return p[a] * p[b] / (1 - p[a]); };
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
            if (a == b) continue;
            const double q = prob(a, b);
            const double sigma = std::sqrt(trials * q * (1 - q));
            EXPECT_LT(std::abs(counts[{a, b}] - trials * q), 4 * sigma);
        }
}

TEST(ExpansionMask, EmptyMapMasksAllValidPixels) {
    const auto intr = testing::square_camera(16, 20);
    Frame<double> f = plane_frame(intr, 1.0);
    f.depth(3, 4) = 0;
    GaussianMap<double> map;
    Gaussian2D<double> far;
    far.position = Vector3<double>(0, 0, -5);  // behind the camera
    map.push_back(far, 0);
    const auto out = render(map, intr, Pose<double>{});
    const Mask m = expansion_mask(out, f, 0.5);
    EXPECT_EQ(count(m), 16 * 16 - 1);
    EXPECT_FALSE(m(3, 4));
}

TEST(ExpansionMask, ConvergedFrameMasksNothing) {
    const auto intr = testing::square_camera(24, 30);
    Frame<double> f = plane_frame(intr, 1.0);
    GaussianMap<double> map = init_map_from_frame(f, Pose<double>{}, intr, 1);
    for (auto& g : map.gaussians) g.opacity_logit = logit(0.99);
    const auto out = render(map, intr, Pose<double>{});
    EXPECT_EQ(count(expansion_mask(out, f, 0.5)), 0);
}

TEST(ExpansionMask, SurfaceInFrontOfMapIsMasked) {
    const auto intr = testing::square_camera(24, 30);
    Frame<double> back = plane_frame(intr, 1.2);
    GaussianMap<double> map = init_map_from_frame(back, Pose<double>{}, intr, 1);
    for (auto& g : map.gaussians) g.opacity_logit = logit(0.99);
    const auto out = render(map, intr, Pose<double>{});

    // GT 10% in front of the rendered surface on the left half only.
    Frame<double> gt = back;
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 12; ++x) gt.depth(x, y) = 1.2 / 1.1;
    const Mask m = expansion_mask(out, gt, 0.5);
    for (int y = 2; y < 22; ++y)
        for (int x = 2; x < 22; ++x) EXPECT_EQ(m(x, y), x < 12) << x << "," << y;
}

TEST(ExpandGaussians, CountMatchesMask) {
    const auto intr = testing::square_camera(16, 20);
    Frame<double> f = plane_frame(intr, 1.0);
    GaussianMap<double> map = init_map_from_frame(f, Pose<double>{}, intr, 4);
    const GaussianMap<double> before = map;

    Mask empty(16, 16, false);
    EXPECT_EQ(expand_gaussians(map, f, Pose<double>{}, empty, intr, 1), 0u);
    EXPECT_EQ(map.size(), before.size());

    Mask m(16, 16, false);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) m(x, y) = (x * 7 + y * 3) % 5 == 0;
    const std::size_t masked = count(m);
    EXPECT_EQ(expand_gaussians(map, f, Pose<double>{}, m, intr, 1), masked);
    EXPECT_EQ(map.size(), before.size() + masked);
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_TRUE(pack(map.gaussians[i]) == pack(before.gaussians[i]));

    // Stride 2 over a full mask seeds one splat per 2x2 block.
    Mask full(16, 16, true);
    GaussianMap<double> g2;
    EXPECT_EQ(expand_gaussians(g2, f, Pose<double>{}, full, intr, 2), 64u);
}

TEST(ExpandGaussians, NewSplatsCoverMaskedPixels) {
    const auto v = wavy_view(48, 36);
    Frame<double> frame = v.frame;
    GaussianMap<double> map = init_map_from_frame(frame, v.pose, v.intr, 1);
    // Carve a hole in the map, then expand into it.
    GaussianMap<double> holed;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const Vector3<double> pc = v.pose.inverse() * map.gaussians[i].position;
        const Vector2<double> uv = v.intr.project(pc);
        if (uv.x() > 14 && uv.x() < 30 && uv.y() > 10 && uv.y() < 24) continue;
        holed.push_back(map.gaussians[i], 0);
    }
    const auto out = render(holed, v.intr, v.pose);
    const Mask m = expansion_mask(out, frame, 0.5);
    ASSERT_GT(count(m), 50);
    expand_gaussians(holed, frame, v.pose, m, v.intr, 1);

    MappingConfig cfg;
    MapOptimizer<double> opt;
    MappingView<double> cur{&frame, v.pose};
    map_update(holed, opt, &cur, {}, v.intr, cfg, 1, 0);
    const auto after = render(holed, v.intr, v.pose);
    for (Eigen::Index i = 0; i < m.data.size(); ++i)
        if (m.data(i)) EXPECT_GE(after.silhouette.data(i), 0.5) << i;
}

TEST(MapUpdate, OverfitsSingleFrame) {
    const auto v = wavy_view(96, 72);
    Frame<double> frame = v.frame;
    GaussianMap<double> map = init_map_from_frame(frame, v.pose, v.intr, 1);
    MappingConfig cfg;
    SplatLearningRates lr;
    lr.position *= frame.depth.data.mean();
    MapOptimizer<double> opt(lr);
    MappingView<double> cur{&frame, v.pose};
    const Pose<double> pose_before = cur.pose;
    const auto stats = map_update(map, opt, &cur, {}, v.intr, cfg, 100, 0);
    EXPECT_EQ(stats.steps, 100);
    EXPECT_LT(stats.last_loss, stats.first_loss);
    const auto out = render(map, v.intr, v.pose);
    EXPECT_GT(metric_psnr(out.color, frame.color), 30.0);
    EXPECT_TRUE(cur.pose.matrix() == pose_before.matrix());
    EXPECT_TRUE(cur.pose.translation == pose_before.translation);

    for (const auto& g : map.gaussians) {
        EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-12);
        EXPECT_GT(g.scale().minCoeff(), 0);
        EXPECT_GT(g.opacity(), 0);
        EXPECT_LT(g.opacity(), 1);
    }
}

TEST(MapUpdate, UnseenSplatsAreUntouched) {
    const auto intr = testing::square_camera(16, 20);
    Frame<double> f = plane_frame(intr, 1.0);
    GaussianMap<double> map = init_map_from_frame(f, Pose<double>{}, intr, 2);
    Gaussian2D<double> hidden;
    hidden.position = Vector3<double>(0, 0, -3);
    hidden.opacity_logit = 0.3;
    map.push_back(hidden, 0);
    MapOptimizer<double> opt;
    MappingView<double> cur{&f, Pose<double>{}};
    MappingConfig cfg;
    map_update(map, opt, &cur, {}, intr, cfg, 5, 0);
    EXPECT_TRUE(pack(map.gaussians.back()) == pack(hidden));
}

TEST(MapUpdate, CurrentFrameShareFollowsPc) {
    const auto intr = testing::square_camera(12, 15);
    Frame<double> a = plane_frame(intr, 1.0), b = plane_frame(intr, 1.0);
    GaussianMap<double> map = init_map_from_frame(a, Pose<double>{}, intr, 2);
    MapOptimizer<double> opt;
    MappingView<double> cur{&a, Pose<double>{}};
    std::vector<MappingView<double>> kf = {{&b, Pose<double>{}}};
    MappingConfig cfg;
    cfg.p_c = 0.5;
    const int iters = 400;
    const auto stats = map_update(map, opt, &cur, kf, intr, cfg, iters, 9);
    // First step is always the current frame; the rest are Bernoulli(p_c).
    const double expected = 1 + 0.5 * (iters - 1);
    EXPECT_LT(std::abs(stats.current_visits - expected), 4 * std::sqrt(0.25 * (iters - 1)));

    MappingStats<double> none = map_update(map, opt, static_cast<const MappingView<double>*>(nullptr), kf, intr, cfg, 10, 9);
    EXPECT_EQ(none.current_visits, 0);
    EXPECT_EQ(none.steps, 10);
}

TEST(MapUpdate, DeterministicForSeed) {
    const auto intr = testing::square_camera(16, 20);
    Frame<double> a = plane_frame(intr, 1.0), b = plane_frame(intr, 1.1);
    const GaussianMap<double> start = init_map_from_frame(a, Pose<double>{}, intr, 2);
    std::vector<MappingView<double>> kf = {{&b, Pose<double>{}}};
    MappingView<double> cur{&a, Pose<double>{}};
    MappingConfig cfg;
    cfg.p_c = 0.5;
    GaussianMap<double> m1 = start, m2 = start;
    MapOptimizer<double> o1, o2;
    map_update(m1, o1, &cur, kf, intr, cfg, 12, 77);
    map_update(m2, o2, &cur, kf, intr, cfg, 12, 77);
    for (std::size_t i = 0; i < m1.size(); ++i) EXPECT_TRUE(pack(m1.gaussians[i]) == pack(m2.gaussians[i]));
}

TEST(Prune, RemovesTransparentSplatsAndState) {
    GaussianMap<double> map;
    for (int i = 0; i < 6; ++i) {
        Gaussian2D<double> g;
        g.opacity_logit = logit(i % 2 ? 0.5 : 0.001);
        g.position.x() = i;
        map.push_back(g, i);
    }
    MapOptimizer<double> opt;
    EXPECT_EQ(prune_transparent(map, opt, 0.005), 3u);
    ASSERT_EQ(map.size(), 3u);
    EXPECT_EQ(opt.size(), 3u);
    EXPECT_EQ(map.creation_frame, (std::vector<int>{1, 3, 5}));
    EXPECT_EQ(map.gaussians[2].position.x(), 5);
}

}  // namespace
}  // namespace surfel
