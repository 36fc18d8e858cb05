#include "test_support.hpp"

#include "surfel/dataset.hpp"
#include "surfel/map_io.hpp"
#include "surfel/metrics.hpp"
#include "surfel/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace surfel {
namespace {

namespace fs = std::filesystem;
using testing::Rng;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("surfel_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Pose<double>> translated(const std::vector<Pose<double>>& poses, const Vector3<double>& d) {
    auto out = poses;
    for (auto& p : out) p.translation += d;
    return out;
}

TEST(Ate, Examples) {
    Rng rng(1);
    std::vector<Pose<double>> gt;
    for (int i = 0; i < 12; ++i) gt.push_back(testing::random_pose(rng, 0.5, 0.2));
    EXPECT_NEAR(metric_ate(gt, gt, true), 0.0, 1e-9);
    EXPECT_EQ(metric_ate(gt, gt, false), 0.0);
    const auto shifted = translated(gt, Vector3<double>(0.003, 0.004, 0));
    EXPECT_NEAR(metric_ate(shifted, gt, false), 5.0, 1e-9);
    EXPECT_NEAR(metric_ate(shifted, gt, true), 0.0, 1e-9);
    EXPECT_THROW((void)metric_ate(gt, std::vector<Pose<double>>(3), true), std::invalid_argument);
}

TEST(Ate, AlignmentRemovesRigidMotion) {
    Rng rng(2);
    std::vector<Pose<double>> gt, est;
    const Pose<double> g = testing::random_pose(rng, 1.0, 0.5);
    for (int i = 0; i < 10; ++i) {
        gt.push_back(testing::random_pose(rng, 0.5, 0.3));
        est.push_back(g * gt.back());
    }
    EXPECT_NEAR(metric_ate(est, gt, true), 0.0, 1e-9);
    EXPECT_GT(metric_ate(est, gt, false), 1.0);
}

TEST(DepthRmse, Examples) {
    Image1<double> gt(4, 4, 1.0);
    const Mask all(4, 4, true);
    EXPECT_EQ(metric_depth_rmse({gt}, {gt}, {all}), 0.0);
    Image1<double> off(4, 4, 1.002);
    EXPECT_NEAR(metric_depth_rmse({off}, {gt}, {all}), 2.0, 1e-9);
    Image1<double> sym = gt;
    for (Eigen::Index i = 0; i < sym.data.size(); ++i) sym.data(i) += i % 2 ? 0.003 : -0.003;
    EXPECT_NEAR(metric_depth_rmse({sym}, {gt}, {all}), 3.0, 1e-9);
    EXPECT_THROW((void)metric_depth_rmse({gt}, {gt}, {Mask(4, 4, false)}), std::invalid_argument);
}

TEST(DepthRmse, PoolsPixelsAcrossFrames) {
    Image1<double> gt(2, 2, 1.0), a(2, 2, 1.001), b(2, 2, 1.0);
    Mask one(2, 2, false);
    one(0, 0) = true;
    // Frame a: 4 pixels with 1 mm error. Frame b: 1 pixel with 0 error. Pooled: sqrt(4 / 5).
    EXPECT_NEAR(metric_depth_rmse({a, b}, {gt, gt}, {Mask(2, 2, true), one}), std::sqrt(0.8), 1e-9);
}

TEST(Psnr, Examples) {
    Image3<double> a(8, 8, 0.5), b(8, 8, 0.6);
    EXPECT_NEAR(metric_psnr(a, b), 20.0, 1e-9);
    EXPECT_TRUE(std::isinf(metric_psnr(a, a)));
    EXPECT_EQ(serialized_psnr(metric_psnr(a, a)), 99.0);
    EXPECT_EQ(serialized_psnr(20.0), 20.0);
}

TEST(Ssim, IdentityAndBounds) {
    Rng rng(4);
    Image3<double> a(16, 16), b(16, 16);
    for (Eigen::Index i = 0; i < a.data.size(); ++i) {
        a.data(i) = testing::uniform(rng, 0, 1);
        b.data(i) = 1 - a.data(i);
    }
    EXPECT_NEAR(metric_ssim(a, a), 1.0, 1e-12);
    const double s = metric_ssim(a, b);
    EXPECT_GE(s, -1.0);
    EXPECT_LT(s, 0.0);
}

TEST(Png, RoundTrips) {
    const fs::path dir = scratch("png");
    Rgb8Image rgb{3, 2, {}};
    for (int i = 0; i < 18; ++i) rgb.pixels.push_back(std::uint8_t(i * 14));
    write_png(dir / "c.png", rgb);
    const auto rgb2 = read_png_rgb8(dir / "c.png");
    EXPECT_EQ(rgb2.width, 3);
    EXPECT_EQ(rgb2.height, 2);
    EXPECT_EQ(rgb2.pixels, rgb.pixels);

    Gray16Image d{2, 2, {0, 1, 40000, 65535}};
    write_png(dir / "d.png", d);
    EXPECT_EQ(read_png_gray16(dir / "d.png").pixels, d.pixels);
    EXPECT_THROW((void)read_png_rgb8(dir / "missing.png"), std::runtime_error);
}

TEST(Trajectory, RoundTripsBitExactly) {
    Rng rng(7);
    std::vector<Pose<double>> poses;
    for (int i = 0; i < 9; ++i) poses.push_back(testing::random_pose(rng, 2.0, 1.0));
    const fs::path dir = scratch("traj");
    write_trajectory(dir / "t.txt", poses);
    const auto back = read_trajectory(dir / "t.txt");
    ASSERT_EQ(back.size(), poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
        EXPECT_TRUE(back[i].translation == poses[i].translation);
        EXPECT_TRUE(back[i].rotation.coeffs() == poses[i].rotation.coeffs());
    }
}

TEST(Intrinsics, RoundTripAndDefaultScale) {
    const fs::path dir = scratch("intr");
    CameraIntrinsics<double> intr{100.5, 101.25, 63.5, 47.5, 128, 96, 5000};
    write_intrinsics(dir / "i.json", intr);
    const auto back = read_intrinsics(dir / "i.json");
    EXPECT_EQ(back.fx, intr.fx);
    EXPECT_EQ(back.cy, intr.cy);
    EXPECT_EQ(back.height, 96);
    EXPECT_EQ(back.depth_scale, 5000);
    std::ofstream(dir / "j.json") << R"({"fx": 1, "fy": 1, "cx": 0, "cy": 0, "width": 2, "height": 2})";
    EXPECT_EQ(read_intrinsics(dir / "j.json").depth_scale, 1000);
}

TEST(Dataset, SynthRoundTrip) {
    SynthConfig cfg;
    cfg.scene = SynthSceneKind::WavyPlane;
    cfg.frames = 3;
    cfg.width = 32;
    cfg.height = 24;
    const SynthSequence seq = synth_generate(cfg);
    const fs::path dir = scratch("dataset");
    write_intrinsics(dir / "intrinsics.json", seq.intrinsics);
    for (const auto& f : seq.frames) write_frame(dir, f, cfg.depth_scale);
    write_trajectory(dir / "groundtruth.txt", seq.poses);

    const Dataset ds(dir);
    ASSERT_EQ(ds.size(), 3u);
    ASSERT_TRUE(ds.groundtruth());
    const Frame<double> f = ds.load(1);
    EXPECT_EQ(f.index, 1);
    for (Eigen::Index i = 0; i < f.depth.data.size(); ++i) {
        EXPECT_LE(std::abs(f.depth.data(i) - seq.frames[1].depth.data(i)), 0.5 / cfg.depth_scale + 1e-12);
        EXPECT_LE(std::abs(f.color.data(i) - seq.frames[1].color.data(i)), 0.5 / 255 + 1e-12);
    }
    EXPECT_THROW((void)ds.load(3), std::exception);
    EXPECT_THROW(Dataset(dir / "nope"), std::runtime_error);
}

GaussianMap<double> small_map(int n) {
    Rng rng(9);
    return testing::random_scene(rng, n, testing::square_camera(16, 20), Pose<double>{});
}

TEST(Ply, SingleSplatFile) {
    const fs::path dir = scratch("ply1");
    export_map_ply(small_map(1), dir / "m.ply");
    const std::string s = slurp(dir / "m.ply");
    EXPECT_NE(s.find("element vertex 1\n"), std::string::npos);
    for (const char* prop : {"x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "opacity", "scale_u", "scale_v"})
        EXPECT_NE(s.find(std::string(" ") + prop + "\n"), std::string::npos) << prop;
    const auto body = s.substr(s.find("end_header\n") + 11);
    EXPECT_EQ(std::count(body.begin(), body.end(), '\n'), 1);
    EXPECT_THROW(export_map_ply(GaussianMap<double>{}, dir / "e.ply"), std::invalid_argument);
}

TEST(Ply, RoundTripAndUnitNormals) {
    const fs::path dir = scratch("ply2");
    const auto map = small_map(25);
    export_map_ply(map, dir / "m.ply");
    const auto back = import_map_ply(dir / "m.ply");
    ASSERT_EQ(back.size(), map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto& a = map.gaussians[i];
        const auto& b = back.gaussians[i];
        EXPECT_LT((a.position - b.position).norm(), 1e-6 * a.position.norm());
        EXPECT_LT(std::abs(a.opacity() - b.opacity()), 1e-6);
        EXPECT_LT((a.normal() - b.normal()).norm(), 1e-6);
        EXPECT_LT((a.color - b.color).norm(), 1e-6);
    }
    // Normals written to the file are unit length.
    std::ifstream in(dir / "m.ply");
    std::string line;
    std::vector<std::string> props;
    while (std::getline(in, line) && line != "end_header")
        if (line.rfind("property", 0) == 0) props.push_back(line.substr(line.rfind(' ') + 1));
    const auto col = [&](const std::string& n) { return std::size_t(std::find(props.begin(), props.end(), n) - props.begin()); };
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        ASSERT_EQ(v.size(), props.size());
        EXPECT_NEAR(Vector3<double>(v[col("nx")], v[col("ny")], v[col("nz")]).norm(), 1.0, 1e-6);
    }
}

TEST(Colormap, FixedRampsAndConstantPlaneNormal) {
    EXPECT_TRUE(depth_colormap(0.0) == Vector3<double>::Zero());
    EXPECT_TRUE(depth_colormap(std::nan("")) == Vector3<double>::Zero());
    EXPECT_TRUE(depth_colormap(2.0).isApprox(Vector3<double>::Ones()));
    EXPECT_TRUE(normal_colormap(Vector3<double>(0, 0, -1)).isApprox(Vector3<double>(0.5, 0.5, 0)));

    const auto intr = testing::square_camera(16, 20);
    Frame<double> f;
    f.color = Image3<double>(16, 16, 0.4);
    f.depth = Image1<double>(16, 16, 1.0);
    GaussianMap<double> plane = init_map_from_frame(f, Pose<double>{}, intr, 1);
    for (auto& g : plane.gaussians) g.opacity_logit = logit(0.99);
    const fs::path dir = scratch("views");
    render_views(plane, {Pose<double>{}}, intr, dir);
    const auto img = read_png_rgb8(dir / "normal_000000.png");
    for (int y = 2; y < 14; ++y)
        for (int x = 2; x < 14; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(img.pixels[3 * (y * 16 + x) + c], img.pixels[3 * (8 * 16 + 8) + c]);

    const fs::path dir2 = scratch("views2");
    render_views(plane, {Pose<double>{}}, intr, dir2);
    for (const char* n : {"color_000000.png", "depth_000000.png", "normal_000000.png"})
        EXPECT_EQ(slurp(dir / n), slurp(dir2 / n)) << n;
}

}  // namespace
}  // namespace surfel
