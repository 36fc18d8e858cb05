#pragma once

#include "surfel/frame.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace surfel {

/// 8-bit RGB, row-major, 3 bytes per pixel.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

struct Gray16Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> pixels;
};

// All IO errors throw std::runtime_error naming the path.
[[nodiscard]] Rgb8Image read_png_rgb8(const std::filesystem::path& path);
[[nodiscard]] Gray16Image read_png_gray16(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8Image& img);
void write_png(const std::filesystem::path& path, const Gray16Image& img);

/// Lines `index tx ty tz qx qy qz qw`, camera-to-world. Values are written with round-trip precision.
void write_trajectory(const std::filesystem::path& path, const std::vector<Pose<double>>& poses);
[[nodiscard]] std::vector<Pose<double>> read_trajectory(const std::filesystem::path& path);

[[nodiscard]] CameraIntrinsics<double> read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics<double>& intr);

/// Dataset directory: intrinsics.json, color/%06d.png, depth/%06d.png and optionally groundtruth.txt.
class Dataset {
public:
    explicit Dataset(std::filesystem::path root);

    [[nodiscard]] const CameraIntrinsics<double>& intrinsics() const { return intr_; }
    [[nodiscard]] std::size_t size() const { return count_; }
    [[nodiscard]] const std::optional<std::vector<Pose<double>>>& groundtruth() const { return gt_; }
    [[nodiscard]] const std::filesystem::path& root() const { return root_; }

    /// Frame `i`, color in [0, 1] and depth in meters.
    [[nodiscard]] Frame<double> load(int i) const;

private:
    std::filesystem::path root_;
    CameraIntrinsics<double> intr_;
    std::size_t count_ = 0;
    std::optional<std::vector<Pose<double>>> gt_;
};

[[nodiscard]] std::filesystem::path color_path(const std::filesystem::path& root, int i);
[[nodiscard]] std::filesystem::path depth_path(const std::filesystem::path& root, int i);

/// Writes a frame in dataset layout. Depth is quantized as round(meters * depth_scale).
void write_frame(const std::filesystem::path& root, const Frame<double>& frame, double depth_scale);

/// Full dataset directory: intrinsics.json, every frame (at intr.depth_scale) and groundtruth.txt.
void write_dataset(const std::filesystem::path& root, const CameraIntrinsics<double>& intr,
                   const std::vector<Frame<double>>& frames, const std::vector<Pose<double>>& poses);

[[nodiscard]] Rgb8Image to_rgb8(const Image3<double>& color);

}  // namespace surfel
