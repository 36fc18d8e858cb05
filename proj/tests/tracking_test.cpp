#include "test_support.hpp"

#include "surfel/mapping.hpp"
#include "surfel/synth.hpp"
#include "surfel/tracking.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace surfel {
namespace {

using testing::Rng;

/// Wavy-plane map fitted at a GT pose. `frame` is the map's own render at that pose, so the GT pose
/// is an exact minimum of the tracking loss. Built once.
struct FittedScene {
    CameraIntrinsics<double> intr;
    Pose<double> gt;
    Frame<double> frame;
    GaussianMap<double> map;
    double scale = 1;

    static const FittedScene& get() {
        static const FittedScene s = [] {
            FittedScene f;
            SynthConfig cfg;
            cfg.scene = SynthSceneKind::WavyPlane;
            cfg.width = 80;
            cfg.height = 60;
            f.intr = synth_intrinsics(cfg);
            f.gt = synth_trajectory(cfg.scene, 20)[5];
            f.frame = render_analytic(*make_scene(cfg.scene, 1), f.gt, f.intr);
            f.frame.ensure_geometry(f.intr);
            f.scale = f.frame.depth.data.mean();
            f.map = init_map_from_frame(f.frame, f.gt, f.intr, 1);
            SplatLearningRates lr;
            lr.position *= f.scale;
            MapOptimizer<double> opt(lr);
            MappingView<double> cur{&f.frame, f.gt};
            map_update(f.map, opt, &cur, {}, f.intr, MappingConfig{}, 100, 1);
            const auto out = render(f.map, f.intr, f.gt);
            f.frame.color = out.color;
            f.frame.depth = out.depth;
            for (Eigen::Index i = 0; i < out.silhouette.data.size(); ++i)
                if (out.silhouette.data(i) < 0.5) f.frame.depth.data(i) = 0;
            f.frame.points.reset();
            f.frame.normals.reset();
            f.frame.ensure_geometry(f.intr);
            return f;
        }();
        return s;
    }
};

double angle_deg(const Pose<double>& a, const Pose<double>& b) {
    return rotation_angle(a.rotation, b.rotation) * 180 / M_PI;
}

TEST(PivotRetract, KeepsPivotFixedUnderRotation) {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const Pose<double> pose = testing::random_pose(rng, 1.0, 0.5);
        const Vector3<double> pivot(0, 0, testing::uniform(rng, 0.5, 2));
        const Vector3<double> dr(testing::uniform(rng, -0.1, 0.1), testing::uniform(rng, -0.1, 0.1),
                                 testing::uniform(rng, -0.1, 0.1));
        const Pose<double> next = pivot_retract(pose, dr, Vector3<double>::Zero().eval(), pivot);
        EXPECT_LT((pose * pivot - next * pivot).norm(), 1e-12);
        EXPECT_LT(rotation_angle(next.rotation, pose.retract(dr, Vector3<double>::Zero()).rotation), 1e-12);

        const Vector3<double> dt(0.01, -0.02, 0.03);
        const Pose<double> moved = pivot_retract(pose, Vector3<double>::Zero().eval(), dt, pivot);
        EXPECT_LT((moved.translation - pose.retract(Vector3<double>::Zero(), dt).translation).norm(), 1e-15);
    }
}

TEST(PivotRetract, GradientMatchesFiniteDifferences) {
    // f(pose) = |pose * a - b|^2 + |pose * c - d|^2, differentiated through both parameterizations.
    Rng rng(6);
    const Vector3<double> a(0.1, 0.2, 1.0), b(0.3, -0.1, 1.4), c(-0.2, 0.1, 0.8), d(0.0, 0.2, 0.9);
    auto f = [&](const Pose<double>& p) { return (p * a - b).squaredNorm() + (p * c - d).squaredNorm(); };
    const double h = 1e-6;
    for (int t = 0; t < 10; ++t) {
        const Pose<double> pose = testing::random_pose(rng, 0.8, 0.3);
        const Vector3<double> pivot(0, 0, 1.3);
        Vector3<double> g_rot, g_trans, g_pivot;
        for (int k = 0; k < 3; ++k) {
            Vector3<double> e = Vector3<double>::Zero();
            e[k] = h;
            const Vector3<double> z = Vector3<double>::Zero();
            g_rot[k] = (f(pose.retract(e, z)) - f(pose.retract(-e, z))) / (2 * h);
            g_trans[k] = (f(pose.retract(z, e)) - f(pose.retract(z, -e))) / (2 * h);
            g_pivot[k] = (f(pivot_retract(pose, e, z, pivot)) - f(pivot_retract(pose, Vector3<double>(-e), z, pivot))) / (2 * h);
        }
        const Vector3<double> analytic = pivot_rotation_gradient(pose, g_rot, g_trans, pivot);
        EXPECT_LT((analytic - g_pivot).norm(), 1e-7 * std::max(1.0, g_pivot.norm()));
    }
}

TEST(Tracking, StationaryCameraStaysPut) {
    const auto& s = FittedScene::get();
    const GaussianMap<double> before = s.map;
    const auto r = refine_pose(s.map, s.frame, s.gt, s.intr, TrackingConfig{}, s.scale);
    EXPECT_FALSE(r.diverged);
    EXPECT_LT(rotation_angle(r.pose.rotation, s.gt.rotation), 1e-5);
    EXPECT_LT((r.pose.translation - s.gt.translation).norm(), 1e-5 * s.scale);
    for (std::size_t i = 0; i < s.map.size(); ++i) ASSERT_TRUE(pack(s.map.gaussians[i]) == pack(before.gaussians[i]));
}

TEST(Tracking, RecoversPerturbedPose) {
    const auto& s = FittedScene::get();
    Rng rng(11);
    for (int t = 0; t < 4; ++t) {
        Vector3<double> ax(testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1));
        Vector3<double> dt(testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1));
        const Pose<double> init = s.gt.retract(ax.normalized() * (0.5 * M_PI / 180), dt.normalized() * 0.005 * s.scale);
        const auto r = refine_pose(s.map, s.frame, init, s.intr, TrackingConfig{}, s.scale);
        EXPECT_FALSE(r.diverged) << r.error;
        EXPECT_LT(angle_deg(r.pose, s.gt), 0.05);
        EXPECT_LT((r.pose.translation - s.gt.translation).norm() / s.scale, 5e-4);
    }
}

TEST(Tracking, ReturnsBestIterate) {
    const auto& s = FittedScene::get();
    const Pose<double> init = s.gt.retract(Vector3<double>(0.01, -0.005, 0.004), Vector3<double>(0.01, 0, -0.01));
    TrackingConfig cfg;
    cfg.iterations = 10;
    const auto r = refine_pose(s.map, s.frame, init, s.intr, cfg, s.scale);
    ASSERT_EQ(r.losses.size(), 11u);
    const double best = *std::min_element(r.losses.begin(), r.losses.end());
    EXPECT_EQ(r.loss.total, best);
    EXPECT_EQ(r.losses[std::size_t(r.best_iteration)], best);
    EXPECT_LE(r.loss.total, r.initial_loss);
    EXPECT_EQ(r.losses.front(), r.initial_loss);
    EXPECT_NEAR(r.pose.rotation.norm(), 1.0, 1e-12);
}

TEST(Tracking, EmptyMaskDivergesToInitialPose) {
    const auto& s = FittedScene::get();
    GaussianMap<double> behind;
    Gaussian2D<double> g;
    g.position = s.gt * Vector3<double>(0, 0, -1);
    behind.push_back(g, 0);
    const auto r = refine_pose(behind, s.frame, s.gt, s.intr, TrackingConfig{}, s.scale);
    EXPECT_TRUE(r.diverged);
    EXPECT_NE(r.error.find("tracking diverged"), std::string::npos);
    EXPECT_TRUE(r.pose.rotation.coeffs() == s.gt.rotation.coeffs());
    EXPECT_TRUE(r.pose.translation == s.gt.translation);
}

TEST(Tracking, NonFiniteLossDiverges) {
    const auto& s = FittedScene::get();
    Frame<double> bad = s.frame;
    bad.color.data.setConstant(std::numeric_limits<double>::quiet_NaN());
    const auto r = refine_pose(s.map, bad, s.gt, s.intr, TrackingConfig{}, s.scale);
    EXPECT_TRUE(r.diverged);
    EXPECT_TRUE(r.pose.translation == s.gt.translation);
}

TEST(TrackerState, ConstantVelocityGuessAndHistory) {
    TrackerState<double> st;
    const Pose<double> a;
    const Pose<double> b(quat_exp<double>(Vector3<double>(0, 0.01, 0)), Vector3<double>(0.1, 0, 0));
    st.push(a);
    EXPECT_TRUE(st.initial_guess().translation == a.translation);
    st.push(b);
    const Pose<double> g = st.initial_guess();
    EXPECT_LT((g.translation - constant_velocity_init(b, a).translation).norm(), 1e-15);
    st.push(g);
    EXPECT_EQ(st.history.size(), 2u);
}

TEST(Tracking, TrackFrameAppendsResult) {
    const auto& s = FittedScene::get();
    TrackerState<double> st;
    st.scene_scale = s.scale;
    st.config.iterations = 3;
    st.push(s.gt);
    const auto r = track_frame(s.map, s.frame, st, s.intr);
    ASSERT_EQ(st.history.size(), 2u);
    EXPECT_TRUE(st.history.back().translation == r.pose.translation);
}

}  // namespace
}  // namespace surfel
