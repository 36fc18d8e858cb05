#include "surfel/dataset.hpp"
#include "surfel/map_io.hpp"
#include "surfel/metrics.hpp"
#include "surfel/pipeline.hpp"
#include "surfel/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace surfel;

namespace {

SlamConfig build_config(const std::string& preset, const std::string& config_file,
                        const std::vector<std::string>& overrides, const std::uint64_t* seed) {
    SlamConfig config = make_preset(preset);
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw std::runtime_error("cannot open: " + config_file);
        config = from_json(nlohmann::json::parse(in), config);
    }
    if (seed) config.seed = *seed;
    for (const auto& o : overrides) apply_override(config, o);
    return config;
}

int run_synth(const std::string& scene, int frames, int width, int height, std::uint64_t seed, const fs::path& out) {
    SynthConfig cfg;
    cfg.scene = parse_scene_kind(scene);
    cfg.frames = frames;
    cfg.width = width;
    cfg.height = height;
    cfg.seed = seed;
    const SynthSequence seq = synth_generate(cfg);
    write_dataset(out, seq.intrinsics, seq.frames, seq.poses);
    std::cout << "wrote " << seq.frames.size() << " frames to " << out.string() << '\n';
    return 0;
}

void print_metrics(const SlamMetrics& m) {
    std::printf("%-14s %10s\n", "metric", "value");
    std::printf("%-14s %10.3f\n", "psnr", serialized_psnr(m.psnr));
    std::printf("%-14s %10.4f\n", "ssim", m.ssim);
    std::printf("%-14s %10.3f\n", "depth_rmse_mm", m.depth_rmse_mm);
    std::printf("%-14s %10.3f\n", "ate_mm", m.ate_mm);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RGB-D SLAM with planar Gaussian surfels"};
    app.require_subcommand(1);

    std::string dataset, out, preset = "base", config_file, scene = "bore", map_path, traj_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    int frames = 50, width = 160, height = 120, divisor = 1;
    double depth_far = 2.0;

    auto* run = app.add_subcommand("run", "Run SLAM on a dataset directory");
    run->add_option("--dataset", dataset, "Dataset directory")->required();
    run->add_option("--out", out, "Output directory")->required();
    run->add_option("--preset", preset, "base | small | tiny")->check(CLI::IsMember({"base", "small", "tiny"}));
    auto* seed_opt = run->add_option("--seed", seed, "RNG seed");
    run->add_option("--config", config_file, "JSON config applied over the preset");
    run->add_option("--set", overrides, "Override, e.g. tracking.iterations=20")->take_all();

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--scene", scene, "bore | wavy | step")->check(CLI::IsMember({"bore", "wavy", "step"}));
    synth->add_option("--frames", frames)->check(CLI::PositiveNumber);
    synth->add_option("--width", width)->check(CLI::PositiveNumber);
    synth->add_option("--height", height)->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed);
    synth->add_option("--out", out, "Output directory")->required();

    auto* rend = app.add_subcommand("render", "Render color, depth and normal views of a map");
    rend->add_option("--map", map_path, "map.ply")->required()->check(CLI::ExistingFile);
    rend->add_option("--trajectory", traj_path, "trajectory.txt")->required()->check(CLI::ExistingFile);
    rend->add_option("--intrinsics", config_file, "intrinsics.json")->required()->check(CLI::ExistingFile);
    rend->add_option("--divisor", divisor, "Resolution divisor")->check(CLI::PositiveNumber);
    rend->add_option("--depth-far", depth_far, "Far end of the depth colormap (m)");
    rend->add_option("--out", out, "Output directory")->required();

    auto* ev = app.add_subcommand("eval", "Score a run against a dataset");
    ev->add_option("--dataset", dataset, "Dataset directory")->required();
    ev->add_option("--run", map_path, "Run output directory (trajectory.txt, map.ply, config.json)")->required();
    ev->add_option("--out", out, "Write metrics.json here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run) {
            const SlamConfig config = build_config(preset, config_file, overrides, *seed_opt ? &seed : nullptr);
            const Dataset data(dataset);
            fs::create_directories(out);
            std::ofstream log(fs::path(out) / "run.log.jsonl");
            const SlamResult result = run_slam(data, config, &log);
            write_results(out, result, config);
            print_metrics(result.metrics);
            std::printf("%-14s %10.1f\n", "seconds", result.seconds);
        } else if (*synth) {
            return run_synth(scene, frames, width, height, seed, out);
        } else if (*rend) {
            const GaussianMap<double> map = import_map_ply(map_path);
            const auto poses = read_trajectory(traj_path);
            const auto intr = read_intrinsics(config_file).downscaled(divisor);
            render_views(map, poses, intr, out, 0.0, depth_far);
            std::cout << "rendered " << poses.size() << " views to " << out << '\n';
        } else if (*ev) {
            const Dataset data(dataset);
            const fs::path run_dir(map_path);
            SlamConfig config;
            if (fs::exists(run_dir / "config.json")) {
                std::ifstream in(run_dir / "config.json");
                config = from_json(nlohmann::json::parse(in));
            }
            const SlamMetrics m =
                evaluate(data, config, read_trajectory(run_dir / "trajectory.txt"), import_map_ply(run_dir / "map.ply"));
            print_metrics(m);
            if (!out.empty()) {
                std::ofstream f(out);
                f << to_json(m).dump(2) << '\n';
            }
        }
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json({{"error", e.what()}}).dump() << '\n';
        return 1;
    }
    return 0;
}
