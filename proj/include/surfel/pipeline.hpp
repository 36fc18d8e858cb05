#pragma once

#include "surfel/bundle_adjust.hpp"
#include "surfel/dataset.hpp"
#include "surfel/mapping.hpp"
#include "surfel/tracking.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace surfel {

struct SlamConfig {
    std::string preset = "base";
    int resolution_divisor = 1;
    TrackingConfig tracking;
    MappingConfig mapping;
    BaConfig ba;
    std::uint64_t seed = 0;
    /// Frames with index % holdout_stride == holdout_stride - 1 are held out of mapping; 0 disables.
    int holdout_stride = 8;
    /// Fixed range of the depth colormap in rendered views.
    double depth_view_far = 2.0;
};

/// base, small or tiny. Throws std::invalid_argument for other names.
[[nodiscard]] SlamConfig make_preset(const std::string& name);

[[nodiscard]] nlohmann::json to_json(const SlamConfig& config);
/// Fields missing from `j` keep the values of `base`. Unknown keys throw std::invalid_argument.
[[nodiscard]] SlamConfig from_json(const nlohmann::json& j, const SlamConfig& base = {});

/// Applies `dotted.path=value`; the value is parsed as JSON, falling back to a plain string.
void apply_override(SlamConfig& config, const std::string& assignment);

[[nodiscard]] bool is_held_out(int frame_index, const SlamConfig& config);

struct FrameDiagnostics {
    int frame = 0;
    bool tracked = false;
    bool diverged = false;
    double tracking_loss = 0;
    int best_iteration = 0;
    std::size_t added = 0;
    std::size_t map_size = 0;
};

struct SlamMetrics {
    double psnr = 0;
    double ssim = 0;
    double depth_rmse_mm = 0;
    double ate_mm = 0;  ///< aligned; NaN without ground truth
    double ate_extent_mm = 0;  ///< bounding-box diagonal of the GT positions
    double mean_depth_mm = 0;  ///< mean valid GT depth over the evaluation frames
    std::vector<int> eval_frames;
};

struct SlamResult {
    std::vector<Pose<double>> trajectory;
    GaussianMap<double> map;
    std::vector<FrameDiagnostics> diagnostics;
    SlamMetrics metrics;
    CameraIntrinsics<double> intrinsics;  ///< at the working resolution
    double seconds = 0;
};

/// Runs the full loop on a dataset. `log`, when given, receives one JSON object per line per event.
[[nodiscard]] SlamResult run_slam(const Dataset& dataset, const SlamConfig& config, std::ostream* log = nullptr);

/// Renders the evaluation frames at their estimated poses and scores them against the dataset.
/// Evaluation frames are the held-out ones, or every frame when none are held out.
[[nodiscard]] SlamMetrics evaluate(const Dataset& dataset, const SlamConfig& config,
                                   const std::vector<Pose<double>>& trajectory, const GaussianMap<double>& map);

[[nodiscard]] nlohmann::json to_json(const SlamMetrics& m);

/// trajectory.txt, map.ply, metrics.json and config.json.
void write_results(const std::filesystem::path& out_dir, const SlamResult& result, const SlamConfig& config);

}  // namespace surfel
