#include "test_support.hpp"

#include "surfel/pipeline.hpp"
#include "surfel/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace surfel {
namespace {

namespace fs = std::filesystem;

fs::path synth_dataset(const std::string& name, SynthSceneKind kind, int frames, int width, int height) {
    const fs::path dir = fs::temp_directory_path() / ("surfel_pipeline_" + name);
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.scene = kind;
    cfg.frames = frames;
    cfg.width = width;
    cfg.height = height;
    const SynthSequence seq = synth_generate(cfg);
    write_dataset(dir, seq.intrinsics, seq.frames, seq.poses);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Presets, MatchPublishedTable) {
    struct Row {
        const char* name;
        int divisor, track, map_iters, map_period, k;
        double p_c;
    };
    for (const Row& r : {Row{"base", 1, 15, 15, 1, 8, 0.1}, Row{"small", 2, 10, 10, 2, 4, 0.5},
                         Row{"tiny", 4, 8, 8, 2, 4, 0.5}}) {
        const SlamConfig c = make_preset(r.name);
        EXPECT_EQ(c.preset, r.name);
        EXPECT_EQ(c.resolution_divisor, r.divisor) << r.name;
        EXPECT_EQ(c.tracking.iterations, r.track) << r.name;
        EXPECT_EQ(c.mapping.iterations, r.map_iters) << r.name;
        EXPECT_EQ(c.mapping.period, r.map_period) << r.name;
        EXPECT_EQ(c.mapping.k, r.k) << r.name;
        EXPECT_EQ(c.mapping.p_c, r.p_c) << r.name;
        EXPECT_EQ(c.mapping.rho_e, 0.5) << r.name;
        EXPECT_EQ(c.mapping.s, 0.2) << r.name;
    }
    EXPECT_THROW((void)make_preset("huge"), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
    SlamConfig c = make_preset("small");
    c.seed = 1234567890123ULL;
    c.tracking.lr_rotation = 1.25e-3;
    c.mapping.prune = true;
    const SlamConfig back = from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.mapping.prune, true);
}

TEST(Config, PartialJsonKeepsBase) {
    const SlamConfig base = make_preset("tiny");
    const SlamConfig c = from_json(nlohmann::json::parse(R"({"tracking": {"iterations": 3}})"), base);
    EXPECT_EQ(c.tracking.iterations, 3);
    EXPECT_EQ(c.resolution_divisor, 4);
    EXPECT_EQ(c.mapping.p_c, 0.5);
}

TEST(Config, RejectsUnknownAndInvalid) {
    EXPECT_THROW((void)from_json(nlohmann::json::parse(R"({"tracking": {"iters": 3}})")), std::invalid_argument);
    EXPECT_THROW((void)from_json(nlohmann::json::parse(R"({"mapping": {"p_c": 1.5}})")), std::invalid_argument);
    EXPECT_THROW((void)from_json(nlohmann::json::parse(R"({"mapping": {"k": "eight"}})")), std::invalid_argument);
    EXPECT_THROW((void)from_json(nlohmann::json::parse("[1, 2]")), std::invalid_argument);
}

TEST(Config, DottedOverrides) {
    SlamConfig c = make_preset("base");
    apply_override(c, "tracking.iterations=7");
    apply_override(c, "mapping.lr.color=0.01");
    apply_override(c, "ba.enabled=false");
    apply_override(c, "preset=custom");
    EXPECT_EQ(c.tracking.iterations, 7);
    EXPECT_EQ(c.mapping.lr.color, 0.01);
    EXPECT_FALSE(c.ba.enabled);
    EXPECT_EQ(c.preset, "custom");
    EXPECT_EQ(c.mapping.k, 8);
    EXPECT_THROW(apply_override(c, "tracking.iterations"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "nope.field=1"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "mapping.n=0"), std::invalid_argument);
}

TEST(HeldOut, EveryEighthFrame) {
    const SlamConfig c;
    std::vector<int> held;
    for (int i = 0; i < 32; ++i)
        if (is_held_out(i, c)) held.push_back(i);
    EXPECT_EQ(held, (std::vector<int>{7, 15, 23, 31}));
    SlamConfig none;
    none.holdout_stride = 0;
    EXPECT_FALSE(is_held_out(7, none));
}

TEST(RunSlam, SingleFrameDataset) {
    const fs::path dir = synth_dataset("one", SynthSceneKind::WavyPlane, 1, 40, 30);
    const Dataset ds(dir);
    SlamConfig c = make_preset("base");
    c.mapping.first_frame_iterations = 20;
    std::ostringstream log;
    const SlamResult r = run_slam(ds, c, &log);
    ASSERT_EQ(r.trajectory.size(), 1u);
    EXPECT_TRUE(r.trajectory[0].translation == (*ds.groundtruth())[0].translation);
    EXPECT_FALSE(r.map.empty());
    EXPECT_EQ(r.metrics.eval_frames, (std::vector<int>{0}));
    EXPECT_GT(r.metrics.psnr, 20);
    EXPECT_EQ(r.metrics.ate_mm, 0.0);
    // Every log line is a JSON object with an event name.
    std::istringstream lines(log.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("event"));
        ++n;
    }
    EXPECT_GE(n, 2);
}

TEST(RunSlam, DeterministicArtifacts) {
    const fs::path dir = synth_dataset("det", SynthSceneKind::Bore, 9, 40, 30);
    const Dataset ds(dir);
    SlamConfig c = make_preset("base");
    c.seed = 5;
    c.mapping.first_frame_iterations = 20;
    c.mapping.iterations = 4;
    c.tracking.iterations = 4;
    c.mapping.k = 4;
    c.ba.period = 6;
    c.ba.iterations = 5;
    const fs::path out1 = dir / "run1", out2 = dir / "run2";
    const SlamResult a = run_slam(ds, c);
    write_results(out1, a, c);
    const SlamResult b = run_slam(ds, c);
    write_results(out2, b, c);
    ASSERT_EQ(a.trajectory.size(), 9u);
    EXPECT_EQ(a.metrics.eval_frames, (std::vector<int>{7}));
    for (const char* f : {"trajectory.txt", "metrics.json", "map.ply", "config.json"}) {
        ASSERT_TRUE(fs::exists(out1 / f)) << f;
        EXPECT_EQ(slurp(out1 / f), slurp(out2 / f)) << f;
    }
    const auto m = nlohmann::json::parse(slurp(out1 / "metrics.json"));
    for (const char* k : {"psnr", "ssim", "depth_rmse_mm", "ate_mm"}) EXPECT_TRUE(m.contains(k)) << k;
    EXPECT_EQ(from_json(nlohmann::json::parse(slurp(out1 / "config.json"))).seed, 5u);
}

TEST(RunSlam, UnreadableFrameNamesPath) {
    const fs::path dir = synth_dataset("broken", SynthSceneKind::WavyPlane, 3, 32, 24);
    fs::remove(depth_path(dir, 1));
    fs::copy_file(color_path(dir, 0), depth_path(dir, 1));
    const Dataset ds(dir);
    SlamConfig c = make_preset("base");
    c.mapping.first_frame_iterations = 2;
    try {
        (void)run_slam(ds, c);
        FAIL() << "expected an error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(depth_path(dir, 1).string()), std::string::npos) << e.what();
    }
}

TEST(Synth, WavyPlaneCenterDepthIsAnalytic) {
    SynthConfig cfg;
    cfg.scene = SynthSceneKind::WavyPlane;
    cfg.width = 41;
    cfg.height = 31;
    const auto intr = synth_intrinsics(cfg);
    const Pose<double> pose = synth_trajectory(cfg.scene, 5)[0];
    const auto scene = make_wavy_plane_scene(0);
    const Frame<double> f = render_analytic(*scene, pose, intr);
    // Independent oracle: bisection of z(t) - surface(x(t), y(t)) along the central ray.
    const Vector3<double> o = pose.translation;
    const Vector3<double> dir = pose.rotation * Vector3<double>(0, 0, 1);
    auto h = [&](double t) {
        const Vector3<double> p = o + t * dir;
        return p.z() - (1.0 + 0.04 * std::sin(2 * M_PI * p.x() / 0.5) * std::sin(2 * M_PI * p.y() / 0.5));
    };
    double lo = 0.01, hi = 0.01;
    while (h(hi) < 0) hi += 0.01;
    lo = hi - 0.01;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (h(mid) < 0 ? lo : hi) = mid;
    }
    ASSERT_EQ(intr.cx, 20);
    ASSERT_EQ(intr.cy, 15);
    EXPECT_NEAR(f.depth(20, 15), 0.5 * (lo + hi), 1e-9);
}

TEST(Synth, BoreDepthsInsideSphere) {
    SynthConfig cfg;
    cfg.frames = 6;
    cfg.width = 32;
    cfg.height = 24;
    const SynthSequence seq = synth_generate(cfg);
    ASSERT_EQ(seq.frames.size(), 6u);
    ASSERT_EQ(seq.poses.size(), 6u);
    for (const auto& f : seq.frames) {
        EXPECT_GT(f.depth.data.minCoeff(), 0.0);
        EXPECT_LT(f.depth.data.maxCoeff(), 2.0);
        EXPECT_GE(f.color.data.minCoeff(), 0.0);
        EXPECT_LE(f.color.data.maxCoeff(), 1.0);
    }
    const SynthSequence again = synth_generate(cfg);
    EXPECT_TRUE(again.frames[3].color.data.isApprox(seq.frames[3].color.data, 0));
}

TEST(Synth, SceneNames) {
    EXPECT_EQ(parse_scene_kind("bore"), SynthSceneKind::Bore);
    EXPECT_EQ(parse_scene_kind("wavy"), SynthSceneKind::WavyPlane);
    EXPECT_EQ(parse_scene_kind("step"), SynthSceneKind::Step);
    EXPECT_THROW((void)parse_scene_kind("cube"), std::invalid_argument);
}

}  // namespace
}  // namespace surfel
