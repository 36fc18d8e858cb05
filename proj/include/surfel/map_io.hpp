#pragma once

#include "surfel/dataset.hpp"
#include "surfel/rasterizer.hpp"

#include <filesystem>
#include <vector>

namespace surfel {

/// ASCII PLY with per-splat x y z nx ny nz red green blue (0-255) opacity scale_u scale_v,
/// plus the raw parameters (quaternion, log-scales, opacity logit, float color) for lossless reload.
void export_map_ply(const GaussianMap<double>& map, const std::filesystem::path& path);
[[nodiscard]] GaussianMap<double> import_map_ply(const std::filesystem::path& path);

/// Depth colormap over a fixed range: piecewise-linear through black, blue, cyan, yellow and white
/// from near to far. Zero or non-finite depth maps to black.
[[nodiscard]] Vector3<double> depth_colormap(double depth, double near = 0.0, double far = 2.0);
/// Camera-frame normal n to color (n + 1) / 2; undefined normals map to black.
[[nodiscard]] Vector3<double> normal_colormap(const Vector3<double>& n);

/// Writes color_%06d.png, depth_%06d.png and normal_%06d.png for each pose into `out_dir`.
void render_views(const GaussianMap<double>& map, const std::vector<Pose<double>>& poses,
                  const CameraIntrinsics<double>& intr, const std::filesystem::path& out_dir,
                  double depth_near = 0.0, double depth_far = 2.0);

}  // namespace surfel
