#pragma once

#include "surfel/types.hpp"
#include "surfel/geometry.hpp"

#include <vector>

namespace surfel {

/// RMSE of camera positions in millimeters (poses in meters). With `align`, the estimate is first
/// rigidly aligned to the ground truth (rotation + translation, no scale).
[[nodiscard]] double metric_ate(const std::vector<Pose<double>>& est, const std::vector<Pose<double>>& gt, bool align);

/// Pooled RMSE in millimeters over the masked pixels of all frames. Throws when every mask is empty.
[[nodiscard]] double metric_depth_rmse(const std::vector<Image1<double>>& renders, const std::vector<Image1<double>>& gts,
                                       const std::vector<Mask>& masks);

/// 10 log10(1 / MSE); +inf for identical images.
[[nodiscard]] double metric_psnr(const Image3<double>& render, const Image3<double>& gt);
[[nodiscard]] double metric_ssim(const Image3<double>& render, const Image3<double>& gt);

/// PSNR as serialized: capped at 99 dB.
[[nodiscard]] inline double serialized_psnr(double psnr) { return psnr > 99 ? 99 : psnr; }

}  // namespace surfel
